#include "dpcc/ply_io.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dpcc {

namespace {

struct Property {
    std::string name;
    std::string type;
    bool is_list = false;
};

struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<Property> props;
};

int scalar_size(const std::string& type) {
    if (type == "char" || type == "int8" || type == "uchar" || type == "uint8") return 1;
    if (type == "short" || type == "int16" || type == "ushort" || type == "uint16") return 2;
    if (type == "int" || type == "int32" || type == "uint" || type == "uint32") return 4;
    if (type == "float" || type == "float32") return 4;
    if (type == "double" || type == "float64") return 8;
    throw std::runtime_error("ply: unknown property type '" + type + "'");
}

double decode_scalar(const uint8_t* p, const std::string& type) {
    auto load = [&](auto v) {
        std::memcpy(&v, p, sizeof v);
        return double(v);
    };
    if (type == "char" || type == "int8") return load(int8_t{});
    if (type == "uchar" || type == "uint8") return load(uint8_t{});
    if (type == "short" || type == "int16") return load(int16_t{});
    if (type == "ushort" || type == "uint16") return load(uint16_t{});
    if (type == "int" || type == "int32") return load(int32_t{});
    if (type == "uint" || type == "uint32") return load(uint32_t{});
    if (type == "float" || type == "float32") return load(float{});
    return load(double{});
}

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

}  // namespace

std::vector<std::array<double, 3>> read_ply(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("ply: cannot open " + path);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    std::size_t pos = 0;
    auto next_line = [&]() {
        std::size_t eol = data.find('\n', pos);
        if (eol == std::string::npos) throw std::runtime_error("ply: truncated header");
        std::string line = data.substr(pos, eol - pos);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        pos = eol + 1;
        return line;
    };

    if (next_line() != "ply") throw std::runtime_error("ply: missing magic");
    bool binary = false;
    bool have_format = false;
    std::vector<Element> elements;

    for (;;) {
        const std::string line = next_line();
        const auto tok = split_ws(line);
        if (tok.empty() || tok[0] == "comment" || tok[0] == "obj_info") continue;
        if (tok[0] == "format") {
            if (tok.size() < 2) throw std::runtime_error("ply: malformed format line");
            if (tok[1] == "ascii")
                binary = false;
            else if (tok[1] == "binary_little_endian")
                binary = true;
            else
                throw std::runtime_error("ply: unsupported format '" + tok[1] + "'");
            have_format = true;
        } else if (tok[0] == "element") {
            if (tok.size() != 3) throw std::runtime_error("ply: malformed element line");
            elements.push_back({tok[1], std::stoull(tok[2]), {}});
        } else if (tok[0] == "property") {
            if (elements.empty()) throw std::runtime_error("ply: property before element");
            if (tok.size() >= 2 && tok[1] == "list") {
                if (tok.size() != 5) throw std::runtime_error("ply: malformed list property");
                elements.back().props.push_back({tok[4], tok[3], true});
            } else {
                if (tok.size() != 3) throw std::runtime_error("ply: malformed property line");
                elements.back().props.push_back({tok[2], tok[1], false});
            }
        } else if (tok[0] == "end_header") {
            break;
        } else {
            throw std::runtime_error("ply: unexpected header line '" + line + "'");
        }
    }
    if (!have_format) throw std::runtime_error("ply: missing format line");

    std::vector<std::array<double, 3>> out;
    for (const Element& el : elements) {
        if (el.name != "vertex") {
            // earlier elements must be skipped to reach the vertex data
            for (const Property& p : el.props)
                if (p.is_list)
                    throw std::runtime_error("ply: cannot skip list property in element '" +
                                             el.name + "'");
            if (binary) {
                std::size_t row = 0;
                for (const Property& p : el.props) row += std::size_t(scalar_size(p.type));
                pos += row * el.count;
                if (pos > data.size()) throw std::runtime_error("ply: truncated body");
            } else {
                for (std::size_t i = 0; i < el.count; ++i) next_line();
            }
            continue;
        }

        int idx[3] = {-1, -1, -1};
        std::vector<std::size_t> offsets;
        std::size_t row_size = 0;
        for (std::size_t i = 0; i < el.props.size(); ++i) {
            const Property& p = el.props[i];
            if (p.is_list)
                throw std::runtime_error("ply: list property '" + p.name + "' in vertex element");
            offsets.push_back(row_size);
            row_size += std::size_t(scalar_size(p.type));
            if (p.name == "x") idx[0] = int(i);
            if (p.name == "y") idx[1] = int(i);
            if (p.name == "z") idx[2] = int(i);
        }
        if (idx[0] < 0 || idx[1] < 0 || idx[2] < 0)
            throw std::runtime_error("ply: vertex element lacks x/y/z");

        out.reserve(el.count);
        if (binary) {
            if (pos + row_size * el.count > data.size())
                throw std::runtime_error("ply: truncated body");
            const uint8_t* base = reinterpret_cast<const uint8_t*>(data.data()) + pos;
            for (std::size_t i = 0; i < el.count; ++i) {
                const uint8_t* row = base + i * row_size;
                std::array<double, 3> p{};
                for (int a = 0; a < 3; ++a)
                    p[std::size_t(a)] = decode_scalar(row + offsets[std::size_t(idx[a])],
                                                      el.props[std::size_t(idx[a])].type);
                out.push_back(p);
            }
            pos += row_size * el.count;
        } else {
            for (std::size_t i = 0; i < el.count; ++i) {
                const auto tok = split_ws(next_line());
                if (tok.size() < el.props.size())
                    throw std::runtime_error("ply: short vertex line");
                std::array<double, 3> p{};
                for (int a = 0; a < 3; ++a) p[std::size_t(a)] = std::stod(tok[std::size_t(idx[a])]);
                out.push_back(p);
            }
        }
        return out;  // everything after vertex is irrelevant here
    }
    throw std::runtime_error("ply: no vertex element");
}

void write_ply(const std::string& path, std::span<const std::array<double, 3>> pts, bool ascii) {
    std::ofstream outf(path, std::ios::binary);
    if (!outf) throw std::runtime_error("ply: cannot write " + path);
    outf << "ply\n"
         << "format " << (ascii ? "ascii" : "binary_little_endian") << " 1.0\n"
         << "element vertex " << pts.size() << "\n"
         << "property float x\nproperty float y\nproperty float z\n"
         << "end_header\n";
    if (ascii) {
        char buf[128];
        for (const auto& p : pts) {
            std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g\n", double(float(p[0])),
                          double(float(p[1])), double(float(p[2])));
            outf << buf;
        }
    } else {
        for (const auto& p : pts) {
            const float xyz[3] = {float(p[0]), float(p[1]), float(p[2])};
            outf.write(reinterpret_cast<const char*>(xyz), sizeof xyz);
        }
    }
    if (!outf) throw std::runtime_error("ply: write failed " + path);
}

}  // namespace dpcc
