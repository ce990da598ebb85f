#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dpcc/mat.hpp"
#include "dpcc/rng.hpp"
#include "dpcc/sparse_tensor.hpp"

namespace dpcc {

struct Parameter {
    std::string name;
    Mat value;
    Mat grad;

    Parameter() = default;
    Parameter(std::string n, Mat v) : name(std::move(n)), value(std::move(v)) {
        grad = Mat(value.rows, value.cols);
    }
    void zero_grad() { grad.fill(0.0); }
};

// Reverse-mode tape over feature matrices. Coordinates are side information
// and never differentiated. Operations are replayed strictly in reverse
// order on backward(); gradients accumulate, so shared inputs just work.
class Tape {
  public:
    int track(Mat value) {
        slots_.push_back({std::move(value), Mat()});
        Slot& s = slots_.back();
        s.grad = Mat(s.value.rows, s.value.cols);
        return int(slots_.size()) - 1;
    }
    const Mat& val(int id) const { return slots_[std::size_t(id)].value; }
    Mat& grad(int id) { return slots_[std::size_t(id)].grad; }
    void record(std::function<void(Tape&)> op) { ops_.push_back(std::move(op)); }
    void backward(int loss_id);

  private:
    struct Slot {
        Mat value;
        Mat grad;
    };
    std::vector<Slot> slots_;
    std::vector<std::function<void(Tape&)>> ops_;
    bool consumed_ = false;
};

int tp_relu(Tape& t, int x);
int tp_add(Tape& t, int a, int b);
int tp_sub(Tape& t, int a, int b);
int tp_add_const(Tape& t, int x, Mat c);
int tp_concat_cols(Tape& t, int a, int b);
int tp_select_rows(Tape& t, int x, std::vector<int> rows);
// alpha * a + beta * b over 1x1 nodes (loss assembly)
int tp_axpby(Tape& t, double alpha, int a, double beta, int b);

// Numerically stable binary cross-entropy with logits, mean over elements.
double bce_with_logits(std::span<const double> logits, std::span<const double> targets);
int tp_bce_with_logits(Tape& t, int logits, std::vector<double> targets);

// Convolution layer over a precomputed kernel map. Weight rows are
// offset-major (enumeration order of kernel_offsets), uniform fan-in init.
struct ConvLayer {
    ConvSpec spec;
    Parameter w, b;

    ConvLayer() = default;
    ConvLayer(const std::string& name, ConvSpec s, Rng& rng);
    int forward(Tape& t, int x, std::shared_ptr<const KernelMap> km);
    Mat apply(const Mat& x, const KernelMap& km) const { return conv_apply(km, x, w.value, b.value); }
    void collect(std::vector<Parameter*>& out) {
        out.push_back(&w);
        out.push_back(&b);
    }
};

// Inception-style residual block: parallel 1x1x1 (w/4), 3x3x3 (w/4) and
// 3x3x3 -> 3x3x3 (w/2) branches concatenated, plus identity. Output lives on
// the input coordinates.
struct IRBlock {
    int width = 0;
    ConvLayer b1, b2, b3a, b3b;

    IRBlock() = default;
    IRBlock(const std::string& name, int width, Rng& rng);
    int forward(Tape& t, int x, const CoordSetPtr& coords, CoordCache& cache);
    void collect(std::vector<Parameter*>& out) {
        b1.collect(out);
        b2.collect(out);
        b3a.collect(out);
        b3b.collect(out);
    }
};

// Adam with bias correction. step() consumes and zeroes the gradients.
class AdamOptimizer {
  public:
    AdamOptimizer(std::vector<Parameter*> params, double lr, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8);
    void step();
    long steps_taken() const { return t_; }
    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

  private:
    std::vector<Parameter*> params_;
    std::vector<Mat> m_, v_;
    long t_ = 0;
    double lr_, beta1_, beta2_, eps_;
};

}  // namespace dpcc
