#include "dpcc/config.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace dpcc {

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

}  // namespace

std::string CodecConfig::serialize() const {
    std::ostringstream os;
    os << "depth=" << depth << "\n";
    os << "enc_widths=" << enc_widths[0] << "," << enc_widths[1] << "," << enc_widths[2] << "\n";
    os << "bottleneck=" << bottleneck << "\n";
    os << "dec_widths=" << dec_widths[0] << "," << dec_widths[1] << "," << dec_widths[2] << "\n";
    os << "predictor_hidden=" << predictor_hidden << "\n";
    os << "irb_per_stage=" << irb_per_stage << "\n";
    os << "lambda=" << fmt_double(lambda) << "\n";
    os << "gop=" << gop << "\n";
    os << "lr=" << fmt_double(lr) << "\n";
    os << "beta1=" << fmt_double(beta1) << "\n";
    os << "beta2=" << fmt_double(beta2) << "\n";
    os << "adam_eps=" << fmt_double(adam_eps) << "\n";
    os << "seed=" << seed << "\n";
    os << "bce_weights=" << fmt_double(bce_weights[0]) << "," << fmt_double(bce_weights[1]) << ","
       << fmt_double(bce_weights[2]) << "\n";
    return os.str();
}

CodecConfig CodecConfig::parse(const std::string& text) {
    CodecConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        // trim
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        const auto e = line.find_last_not_of(" \t\r");
        line = line.substr(b, e - b + 1);

        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);

        const auto ints3 = [&](std::array<int, 3>& dst) {
            const auto parts = split_csv(val);
            if (parts.size() != 3)
                throw std::invalid_argument("config: " + key + " needs three values");
            for (int i = 0; i < 3; ++i) dst[std::size_t(i)] = std::stoi(parts[std::size_t(i)]);
        };

        if (key == "depth") cfg.depth = std::stoi(val);
        else if (key == "enc_widths") ints3(cfg.enc_widths);
        else if (key == "bottleneck") cfg.bottleneck = std::stoi(val);
        else if (key == "dec_widths") ints3(cfg.dec_widths);
        else if (key == "predictor_hidden") cfg.predictor_hidden = std::stoi(val);
        else if (key == "irb_per_stage") cfg.irb_per_stage = std::stoi(val);
        else if (key == "lambda") cfg.lambda = std::stod(val);
        else if (key == "gop") cfg.gop = std::stoi(val);
        else if (key == "lr") cfg.lr = std::stod(val);
        else if (key == "beta1") cfg.beta1 = std::stod(val);
        else if (key == "beta2") cfg.beta2 = std::stod(val);
        else if (key == "adam_eps") cfg.adam_eps = std::stod(val);
        else if (key == "seed") cfg.seed = std::stoull(val);
        else if (key == "bce_weights") {
            const auto parts = split_csv(val);
            if (parts.size() != 3)
                throw std::invalid_argument("config: bce_weights needs three values");
            for (int i = 0; i < 3; ++i) cfg.bce_weights[std::size_t(i)] = std::stod(parts[std::size_t(i)]);
        } else {
            throw std::invalid_argument("config: unknown key '" + key + "'");
        }
    }
    return cfg;
}

CodecConfig CodecConfig::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
}

void CodecConfig::validate() const {
    const auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
    if (depth < 4 || depth > 16) fail("depth must be in [4, 16]");
    for (int w : enc_widths)
        if (w < 4 || w % 4 != 0) fail("encoder widths must be positive multiples of 4");
    for (int w : dec_widths)
        if (w < 4 || w % 4 != 0) fail("decoder widths must be positive multiples of 4");
    if (bottleneck < 1 || bottleneck > 255) fail("bottleneck must fit a byte");
    if (predictor_hidden < 4) fail("predictor_hidden too small");
    if ((predictor_hidden + enc_widths[0]) % 4 != 0 || (predictor_hidden + enc_widths[1]) % 4 != 0 ||
        (predictor_hidden + bottleneck) % 4 != 0)
        fail("predictor concat widths must be multiples of 4");
    if (irb_per_stage < 1 || irb_per_stage > 8) fail("irb_per_stage must be in [1, 8]");
    if (lambda <= 0.0) fail("lambda must be positive");
    if (gop < 1) fail("gop must be >= 1");
    if (lr <= 0.0) fail("lr must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) fail("betas must be in [0, 1)");
    if (adam_eps <= 0.0) fail("adam_eps must be positive");
    for (double w : bce_weights)
        if (w < 0.0) fail("bce_weights must be nonnegative");
}

}  // namespace dpcc
