#include "dpcc/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace dpcc {

void Tape::backward(int loss_id) {
    if (consumed_) throw std::logic_error("Tape: backward called twice");
    consumed_ = true;
    Mat& g = grad(loss_id);
    if (g.rows != 1 || g.cols != 1) throw std::invalid_argument("Tape: loss must be scalar");
    g(0, 0) = 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)(*this);
}

int tp_relu(Tape& t, int x) {
    const Mat& in = t.val(x);
    Mat out = in;
    for (double& e : out.v) e = e > 0.0 ? e : 0.0;
    const int y = t.track(std::move(out));
    t.record([x, y](Tape& tp) {
        const Mat& v = tp.val(x);
        const Mat& gy = tp.grad(y);
        Mat& gx = tp.grad(x);
        for (std::size_t i = 0; i < v.size(); ++i)
            if (v.v[i] > 0.0) gx.v[i] += gy.v[i];
    });
    return y;
}

int tp_add(Tape& t, int a, int b) {
    const Mat& va = t.val(a);
    const Mat& vb = t.val(b);
    if (!va.same_shape(vb)) throw std::invalid_argument("tp_add: shape mismatch");
    Mat out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += vb.v[i];
    const int y = t.track(std::move(out));
    t.record([a, b, y](Tape& tp) {
        const Mat& gy = tp.grad(y);
        Mat& ga = tp.grad(a);
        Mat& gb = tp.grad(b);
        for (std::size_t i = 0; i < gy.size(); ++i) {
            ga.v[i] += gy.v[i];
            gb.v[i] += gy.v[i];
        }
    });
    return y;
}

int tp_sub(Tape& t, int a, int b) {
    const Mat& va = t.val(a);
    const Mat& vb = t.val(b);
    if (!va.same_shape(vb)) throw std::invalid_argument("tp_sub: shape mismatch");
    Mat out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] -= vb.v[i];
    const int y = t.track(std::move(out));
    t.record([a, b, y](Tape& tp) {
        const Mat& gy = tp.grad(y);
        Mat& ga = tp.grad(a);
        Mat& gb = tp.grad(b);
        for (std::size_t i = 0; i < gy.size(); ++i) {
            ga.v[i] += gy.v[i];
            gb.v[i] -= gy.v[i];
        }
    });
    return y;
}

int tp_add_const(Tape& t, int x, Mat c) {
    const Mat& vx = t.val(x);
    if (!vx.same_shape(c)) throw std::invalid_argument("tp_add_const: shape mismatch");
    Mat out = vx;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += c.v[i];
    const int y = t.track(std::move(out));
    t.record([x, y](Tape& tp) {
        const Mat& gy = tp.grad(y);
        Mat& gx = tp.grad(x);
        for (std::size_t i = 0; i < gy.size(); ++i) gx.v[i] += gy.v[i];
    });
    return y;
}

int tp_concat_cols(Tape& t, int a, int b) {
    const Mat& va = t.val(a);
    const Mat& vb = t.val(b);
    if (va.rows != vb.rows) throw std::invalid_argument("tp_concat_cols: row mismatch");
    Mat out(va.rows, va.cols + vb.cols);
    for (int r = 0; r < va.rows; ++r) {
        std::copy(va.row(r), va.row(r) + va.cols, out.row(r));
        std::copy(vb.row(r), vb.row(r) + vb.cols, out.row(r) + va.cols);
    }
    const int ca = va.cols;  // track() may reallocate slot storage behind va
    const int y = t.track(std::move(out));
    t.record([a, b, y, ca](Tape& tp) {
        const Mat& gy = tp.grad(y);
        Mat& ga = tp.grad(a);
        Mat& gb = tp.grad(b);
        for (int r = 0; r < gy.rows; ++r) {
            const double* g = gy.row(r);
            double* pa = ga.row(r);
            double* pb = gb.row(r);
            for (int c = 0; c < ga.cols; ++c) pa[c] += g[c];
            for (int c = 0; c < gb.cols; ++c) pb[c] += g[ca + c];
        }
    });
    return y;
}

int tp_select_rows(Tape& t, int x, std::vector<int> rows) {
    const Mat& vx = t.val(x);
    Mat out(int(rows.size()), vx.cols);
    for (std::size_t r = 0; r < rows.size(); ++r)
        std::copy(vx.row(rows[r]), vx.row(rows[r]) + vx.cols, out.row(int(r)));
    const int y = t.track(std::move(out));
    auto idx = std::make_shared<std::vector<int>>(std::move(rows));
    t.record([x, y, idx](Tape& tp) {
        const Mat& gy = tp.grad(y);
        Mat& gx = tp.grad(x);
        for (std::size_t r = 0; r < idx->size(); ++r) {
            const double* g = gy.row(int(r));
            double* dst = gx.row((*idx)[r]);
            for (int c = 0; c < gy.cols; ++c) dst[c] += g[c];
        }
    });
    return y;
}

int tp_axpby(Tape& t, double alpha, int a, double beta, int b) {
    const Mat& va = t.val(a);
    const Mat& vb = t.val(b);
    if (va.size() != 1 || vb.size() != 1) throw std::invalid_argument("tp_axpby: scalars only");
    Mat out(1, 1, alpha * va.v[0] + beta * vb.v[0]);
    const int y = t.track(std::move(out));
    t.record([alpha, a, beta, b, y](Tape& tp) {
        const double g = tp.grad(y).v[0];
        tp.grad(a).v[0] += alpha * g;
        tp.grad(b).v[0] += beta * g;
    });
    return y;
}

double bce_with_logits(std::span<const double> logits, std::span<const double> targets) {
    if (logits.size() != targets.size() || logits.empty())
        throw std::invalid_argument("bce_with_logits: bad sizes");
    double acc = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double l = logits[i];
        acc += std::max(l, 0.0) - l * targets[i] + std::log1p(std::exp(-std::abs(l)));
    }
    return acc / double(logits.size());
}

int tp_bce_with_logits(Tape& t, int logits, std::vector<double> targets) {
    const Mat& vl = t.val(logits);
    if (vl.size() != targets.size())
        throw std::invalid_argument("tp_bce_with_logits: target size mismatch");
    Mat out(1, 1, bce_with_logits(std::span(vl.v), std::span(targets)));
    const int y = t.track(std::move(out));
    auto tg = std::make_shared<std::vector<double>>(std::move(targets));
    t.record([logits, y, tg](Tape& tp) {
        const double g = tp.grad(y).v[0] / double(tg->size());
        const Mat& vl = tp.val(logits);
        Mat& gl = tp.grad(logits);
        for (std::size_t i = 0; i < vl.size(); ++i) {
            const double sig = 1.0 / (1.0 + std::exp(-vl.v[i]));
            gl.v[i] += g * (sig - (*tg)[i]);
        }
    });
    return y;
}

ConvLayer::ConvLayer(const std::string& name, ConvSpec s, Rng& rng) : spec(s) {
    const int volume = s.kernel_size * s.kernel_size * s.kernel_size;
    const double bound = 1.0 / std::sqrt(double(volume) * s.in_channels);
    Mat wv(volume * s.in_channels, s.out_channels);
    for (double& e : wv.v) e = rng.uniform(-bound, bound);
    w = Parameter(name + ".w", std::move(wv));
    b = Parameter(name + ".b", Mat(1, s.out_channels));
}

int ConvLayer::forward(Tape& t, int x, std::shared_ptr<const KernelMap> km) {
    const int y = t.track(conv_apply(*km, t.val(x), w.value, b.value));
    Parameter* pw = &w;
    Parameter* pb = &b;
    t.record([x, y, km, pw, pb](Tape& tp) {
        const Mat& gy = tp.grad(y);
        const Mat& vx = tp.val(x);
        Mat gin = conv_grad_input(*km, gy, pw->value, vx.rows);
        Mat& gx = tp.grad(x);
        for (std::size_t i = 0; i < gx.size(); ++i) gx.v[i] += gin.v[i];
        conv_grad_params(*km, vx, gy, pw->grad, pb->grad);
    });
    return y;
}

IRBlock::IRBlock(const std::string& name, int w, Rng& rng) : width(w) {
    if (w % 4 != 0) throw std::invalid_argument("IRBlock: width must be divisible by 4");
    b1 = ConvLayer(name + ".b1", {w, w / 4, 1, 1, false}, rng);
    b2 = ConvLayer(name + ".b2", {w, w / 4, 3, 1, false}, rng);
    b3a = ConvLayer(name + ".b3a", {w, w / 2, 3, 1, false}, rng);
    b3b = ConvLayer(name + ".b3b", {w / 2, w / 2, 3, 1, false}, rng);
}

int IRBlock::forward(Tape& t, int x, const CoordSetPtr& coords, CoordCache& cache) {
    auto k1 = cache.map(coords, coords, {0, 0, 1, 1, false});
    auto k3 = cache.map(coords, coords, {0, 0, 3, 1, false});
    const int y1 = tp_relu(t, b1.forward(t, x, k1));
    const int y2 = tp_relu(t, b2.forward(t, x, k3));
    const int y3 = b3b.forward(t, tp_relu(t, b3a.forward(t, x, k3)), k3);
    const int cat = tp_concat_cols(t, tp_concat_cols(t, y1, y2), y3);
    return tp_add(t, x, cat);
}

AdamOptimizer::AdamOptimizer(std::vector<Parameter*> params, double lr, double beta1,
                             double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (Parameter* p : params_) {
        m_.emplace_back(p->value.rows, p->value.cols);
        v_.emplace_back(p->value.rows, p->value.cols);
    }
}

void AdamOptimizer::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, double(t_));
    const double c2 = 1.0 - std::pow(beta2_, double(t_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        Parameter& p = *params_[pi];
        Mat& m = m_[pi];
        Mat& v = v_[pi];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad.v[i];
            m.v[i] = beta1_ * m.v[i] + (1.0 - beta1_) * g;
            v.v[i] = beta2_ * v.v[i] + (1.0 - beta2_) * g * g;
            const double mh = m.v[i] / c1;
            const double vh = v.v[i] / c2;
            p.value.v[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
        }
        p.zero_grad();
    }
}

}  // namespace dpcc
