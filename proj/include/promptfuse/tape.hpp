#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "promptfuse/error.hpp"

namespace promptfuse {

template <class S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
using RowVector = Eigen::Matrix<S, 1, Eigen::Dynamic, Eigen::RowMajor>;

/// Reverse-mode autodiff over row-major matrices.
///
/// Nodes are appended in evaluation order, so a reverse sweep is a valid
/// topological order. An op records a backward closure only when one of its
/// inputs requires a gradient; frozen weights are passed by const reference
/// and never become nodes, so they cannot receive gradients.
template <class S>
class Tape {
public:
    using Mat = Matrix<S>;
    using Row = RowVector<S>;

    struct Var {
        std::size_t id = 0;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Mat value) { return push(std::move(value), false, nullptr); }

    /// Constant that aliases caller storage. `value` must outlive the tape.
    Var constant_ref(const Mat& value) {
        Node n;
        n.ref = &value;
        nodes_.push_back(std::move(n));
        return {nodes_.size() - 1};
    }

    /// Leaf whose gradient is added into `grad_sink` by backward().
    /// Both references must outlive the tape.
    Var parameter(const Mat& value, Mat& grad_sink) {
        Node n;
        n.ref = &value;
        n.requires_grad = true;
        n.sink = &grad_sink;
        nodes_.push_back(std::move(n));
        return {nodes_.size() - 1};
    }

    const Mat& value(Var v) const { return nodes_[v.id].get(); }
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Seeds d(out)/d(out) = 1 for a 1x1 output and sweeps backwards.
    void backward(Var out) {
        if (value(out).size() != 1) throw ShapeError("backward: output must be a scalar");
        if (!requires_grad(out)) return;
        nodes_[out.id].grad = Mat::Ones(1, 1);
        for (std::size_t i = out.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.grad.size() == 0) continue;
            if (n.back) n.back(*this, n.grad);
            if (n.sink) {
                if (n.sink->size() == 0)
                    *n.sink = n.grad;
                else
                    *n.sink += n.grad;
            }
        }
    }

    // ---- elementwise / affine -------------------------------------------

    Var add(Var a, Var b) {
        const Mat& av = value(a);
        const Mat& bv = value(b);
        if (av.rows() != bv.rows() || av.cols() != bv.cols()) throw ShapeError("add: shape mismatch");
        return record(av + bv, {a, b}, [a, b](Tape& t, const Mat& g) {
            t.accumulate(a, g);
            t.accumulate(b, g);
        });
    }

    Var add_const(Var a, const Mat& c) {
        const Mat& av = value(a);
        if (av.rows() != c.rows() || av.cols() != c.cols()) throw ShapeError("add_const: shape mismatch");
        return record(av + c, {a}, [a](Tape& t, const Mat& g) { t.accumulate(a, g); });
    }

    /// x * W + bias with frozen W (and optional frozen bias row).
    Var linear(Var x, const Mat& w, const Mat* bias = nullptr) {
        const Mat& xv = value(x);
        if (xv.cols() != w.rows()) throw ShapeError("linear: inner dimension mismatch");
        Mat y = xv * w;
        if (bias) y.rowwise() += bias->row(0);
        return record(std::move(y), {x}, [x, &w](Tape& t, const Mat& g) { t.accumulate(x, g * w.transpose()); });
    }

    Var matmul(Var a, Var b) {
        const Mat& av = value(a);
        const Mat& bv = value(b);
        if (av.cols() != bv.rows()) throw ShapeError("matmul: inner dimension mismatch");
        return record(av * bv, {a, b}, [a, b](Tape& t, const Mat& g) {
            if (t.requires_grad(a)) t.accumulate(a, g * t.value(b).transpose());
            if (t.requires_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
        });
    }

    /// a * b^T.
    Var matmul_nt(Var a, Var b) {
        const Mat& av = value(a);
        const Mat& bv = value(b);
        if (av.cols() != bv.cols()) throw ShapeError("matmul_nt: inner dimension mismatch");
        return record(av * bv.transpose(), {a, b}, [a, b](Tape& t, const Mat& g) {
            if (t.requires_grad(a)) t.accumulate(a, g * t.value(b));
            if (t.requires_grad(b)) t.accumulate(b, g.transpose() * t.value(a));
        });
    }

    /// Adds a 1 x cols row (a node) to every row of x.
    Var add_row(Var x, Var bias) {
        const Mat& xv = value(x);
        const Mat& bv = value(bias);
        if (bv.rows() != 1 || bv.cols() != xv.cols()) throw ShapeError("add_row: bias shape mismatch");
        Mat y = xv;
        y.rowwise() += bv.row(0);
        return record(std::move(y), {x, bias}, [x, bias](Tape& t, const Mat& g) {
            t.accumulate(x, g);
            if (t.requires_grad(bias)) t.accumulate(bias, g.colwise().sum());
        });
    }

    /// Row-wise layer normalisation with frozen affine parameters (1 x cols).
    Var layer_norm(Var x, const Mat& gamma, const Mat& beta, S eps = S(1e-5)) {
        const Mat& xv = value(x);
        const auto cols = xv.cols();
        Mat xhat(xv.rows(), cols);
        Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std(xv.rows());
        for (Eigen::Index r = 0; r < xv.rows(); ++r) {
            const S mean = xv.row(r).mean();
            const S var = (xv.row(r).array() - mean).square().mean();
            inv_std(r) = S(1) / std::sqrt(var + eps);
            xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
        }
        Mat y = xhat.array().rowwise() * gamma.row(0).array();
        y.rowwise() += beta.row(0);
        if (!requires_grad(x)) return constant(std::move(y));
        return record(std::move(y), {x},
                      [x, &gamma, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Mat& g) {
                          Mat dxhat = g.array().rowwise() * gamma.row(0).array();
                          Mat dx(g.rows(), g.cols());
                          for (Eigen::Index r = 0; r < g.rows(); ++r) {
                              const S m1 = dxhat.row(r).mean();
                              const S m2 = (dxhat.row(r).array() * xhat.row(r).array()).mean();
                              dx.row(r) = (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2) * inv_std(r);
                          }
                          t.accumulate(x, dx);
                      });
    }

    /// x * sigmoid(1.702 x).
    Var quick_gelu(Var x) {
        const Mat& xv = value(x);
        Mat sig = (S(1) + (S(-1.702) * xv.array()).exp()).inverse().matrix();
        Mat y = xv.array() * sig.array();
        if (!requires_grad(x)) return constant(std::move(y));
        return record(std::move(y), {x}, [x, sig = std::move(sig)](Tape& t, const Mat& g) {
            const Mat& xv2 = t.value(x);
            Mat d = sig.array() + S(1.702) * xv2.array() * sig.array() * (S(1) - sig.array());
            t.accumulate(x, (g.array() * d.array()).matrix());
        });
    }

    /// Multi-head self-attention over `groups` stacked sequences of `seq` rows.
    /// Input rows are [q | k | v], each `width` wide; output is groups*seq x width.
    Var attention(Var qkv, Eigen::Index groups, Eigen::Index seq, int heads, bool causal) {
        const Mat& in = value(qkv);
        if (in.rows() != groups * seq || in.cols() % 3 != 0) throw ShapeError("attention: bad qkv shape");
        const Eigen::Index width = in.cols() / 3;
        if (width % heads != 0) throw ShapeError("attention: width not divisible by heads");
        const Eigen::Index hd = width / heads;
        const S scale = S(1) / std::sqrt(static_cast<S>(hd));
        const bool keep = requires_grad(qkv);

        Mat out(in.rows(), width);
        std::vector<Mat> probs;
        if (keep) probs.reserve(static_cast<std::size_t>(groups * heads));
        Mat scores(seq, seq);
        for (Eigen::Index g = 0; g < groups; ++g) {
            for (int h = 0; h < heads; ++h) {
                const auto q = in.block(g * seq, h * hd, seq, hd);
                const auto k = in.block(g * seq, width + h * hd, seq, hd);
                const auto v = in.block(g * seq, 2 * width + h * hd, seq, hd);
                scores.noalias() = (q * k.transpose()) * scale;
                for (Eigen::Index i = 0; i < seq; ++i) {
                    const Eigen::Index valid = causal ? i + 1 : seq;
                    const S mx = scores.row(i).head(valid).maxCoeff();
                    scores.row(i).head(valid) = (scores.row(i).head(valid).array() - mx).exp();
                    if (valid < seq) scores.row(i).tail(seq - valid).setZero();
                    scores.row(i) /= scores.row(i).sum();
                }
                out.block(g * seq, h * hd, seq, hd).noalias() = scores * v;
                if (keep) probs.push_back(scores);
            }
        }
        if (!keep) return constant(std::move(out));
        return record(std::move(out), {qkv},
                      [qkv, groups, seq, heads, width, hd, scale, probs = std::move(probs)](Tape& t, const Mat& g) {
                          const Mat& in2 = t.value(qkv);
                          Mat d = Mat::Zero(in2.rows(), in2.cols());
                          Mat dp(seq, seq);
                          for (Eigen::Index gi = 0; gi < groups; ++gi) {
                              for (int h = 0; h < heads; ++h) {
                                  const Mat& p = probs[static_cast<std::size_t>(gi * heads + h)];
                                  const auto q = in2.block(gi * seq, h * hd, seq, hd);
                                  const auto k = in2.block(gi * seq, width + h * hd, seq, hd);
                                  const auto v = in2.block(gi * seq, 2 * width + h * hd, seq, hd);
                                  const auto go = g.block(gi * seq, h * hd, seq, hd);
                                  d.block(gi * seq, 2 * width + h * hd, seq, hd).noalias() = p.transpose() * go;
                                  dp.noalias() = go * v.transpose();
                                  // softmax backward: ds = p * (dp - rowsum(dp * p))
                                  Eigen::Matrix<S, Eigen::Dynamic, 1> dots = (dp.array() * p.array()).rowwise().sum();
                                  Mat ds = (p.array() * (dp.colwise() - dots).array()).matrix() * scale;
                                  d.block(gi * seq, h * hd, seq, hd).noalias() = ds * k;
                                  d.block(gi * seq, width + h * hd, seq, hd).noalias() = ds.transpose() * q;
                              }
                          }
                          t.accumulate(qkv, d);
                      });
    }

    // ---- sequence surgery -------------------------------------------------

    /// Inserts `rows` (P x w) after position `at` of every group of `seq` rows.
    Var insert_rows(Var x, Var rows, Eigen::Index seq, Eigen::Index at) {
        const Mat& xv = value(x);
        const Mat& pv = value(rows);
        if (xv.cols() != pv.cols()) throw ShapeError("insert_rows: width mismatch");
        if (seq <= 0 || xv.rows() % seq != 0 || at > seq) throw ShapeError("insert_rows: bad grouping");
        const Eigen::Index groups = xv.rows() / seq, p = pv.rows(), out_seq = seq + p;
        Mat y(groups * out_seq, xv.cols());
        for (Eigen::Index gi = 0; gi < groups; ++gi) {
            y.middleRows(gi * out_seq, at) = xv.middleRows(gi * seq, at);
            y.middleRows(gi * out_seq + at, p) = pv;
            y.middleRows(gi * out_seq + at + p, seq - at) = xv.middleRows(gi * seq + at, seq - at);
        }
        return record(std::move(y), {x, rows}, [x, rows, groups, seq, at, p, out_seq](Tape& t, const Mat& g) {
            if (t.requires_grad(x)) {
                Mat dx(groups * seq, g.cols());
                for (Eigen::Index gi = 0; gi < groups; ++gi) {
                    dx.middleRows(gi * seq, at) = g.middleRows(gi * out_seq, at);
                    dx.middleRows(gi * seq + at, seq - at) = g.middleRows(gi * out_seq + at + p, seq - at);
                }
                t.accumulate(x, dx);
            }
            if (t.requires_grad(rows)) {
                Mat dp = Mat::Zero(p, g.cols());
                for (Eigen::Index gi = 0; gi < groups; ++gi) dp += g.middleRows(gi * out_seq + at, p);
                t.accumulate(rows, dp);
            }
        });
    }

    /// Overwrites rows [at, at + P) of every group of `seq` rows with `rows`.
    Var replace_rows(Var x, Var rows, Eigen::Index seq, Eigen::Index at) {
        const Mat& xv = value(x);
        const Mat& pv = value(rows);
        const Eigen::Index p = pv.rows();
        if (xv.cols() != pv.cols()) throw ShapeError("replace_rows: width mismatch");
        if (seq <= 0 || xv.rows() % seq != 0 || at + p > seq) throw ShapeError("replace_rows: bad grouping");
        const Eigen::Index groups = xv.rows() / seq;
        Mat y = xv;
        for (Eigen::Index gi = 0; gi < groups; ++gi) y.middleRows(gi * seq + at, p) = pv;
        return record(std::move(y), {x, rows}, [x, rows, groups, seq, at, p](Tape& t, const Mat& g) {
            if (t.requires_grad(x)) {
                Mat dx = g;
                for (Eigen::Index gi = 0; gi < groups; ++gi) dx.middleRows(gi * seq + at, p).setZero();
                t.accumulate(x, dx);
            }
            if (t.requires_grad(rows)) {
                Mat dp = Mat::Zero(p, g.cols());
                for (Eigen::Index gi = 0; gi < groups; ++gi) dp += g.middleRows(gi * seq + at, p);
                t.accumulate(rows, dp);
            }
        });
    }

    Var select_rows(Var x, std::vector<Eigen::Index> rows) {
        const Mat& xv = value(x);
        Mat y(static_cast<Eigen::Index>(rows.size()), xv.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i] < 0 || rows[i] >= xv.rows()) throw ShapeError("select_rows: index out of range");
            y.row(static_cast<Eigen::Index>(i)) = xv.row(rows[i]);
        }
        return record(std::move(y), {x}, [x, rows = std::move(rows)](Tape& t, const Mat& g) {
            Mat dx = Mat::Zero(t.value(x).rows(), g.cols());
            for (std::size_t i = 0; i < rows.size(); ++i) dx.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
            t.accumulate(x, dx);
        });
    }

    /// Mean over consecutive blocks of `group` rows: (G*group x d) -> (G x d).
    Var group_mean(Var x, Eigen::Index group) {
        const Mat& xv = value(x);
        if (group <= 0 || xv.rows() % group != 0) throw ShapeError("group_mean: rows not divisible by group");
        const Eigen::Index groups = xv.rows() / group;
        Mat y(groups, xv.cols());
        for (Eigen::Index gi = 0; gi < groups; ++gi)
            y.row(gi) = xv.middleRows(gi * group, group).colwise().sum() / static_cast<S>(group);
        return record(std::move(y), {x}, [x, group, groups](Tape& t, const Mat& g) {
            Mat dx(groups * group, g.cols());
            for (Eigen::Index gi = 0; gi < groups; ++gi)
                dx.middleRows(gi * group, group).rowwise() = g.row(gi) / static_cast<S>(group);
            t.accumulate(x, dx);
        });
    }

    // ---- heads ------------------------------------------------------------

    /// Divides each row by its L2 norm. A zero row is a degenerate feature.
    Var normalize_rows(Var x) {
        const Mat& xv = value(x);
        Eigen::Matrix<S, Eigen::Dynamic, 1> norms = xv.rowwise().norm();
        for (Eigen::Index r = 0; r < norms.size(); ++r)
            if (!(norms(r) > S(0)) || !std::isfinite(static_cast<double>(norms(r))))
                throw ValidationError("degenerate feature: zero-norm vector cannot be normalised");
        Mat y = xv.array().colwise() / norms.array();
        if (!requires_grad(x)) return constant(std::move(y));
        return record(std::move(y), {x}, [x, self = nodes_.size(), norms = std::move(norms)](Tape& t, const Mat& g) {
            const Mat& yv = t.nodes_[self].get();
            Eigen::Matrix<S, Eigen::Dynamic, 1> dots = (yv.array() * g.array()).rowwise().sum();
            Mat dx = ((g - (yv.array().colwise() * dots.array()).matrix()).array().colwise() / norms.array()).matrix();
            t.accumulate(x, dx);
        });
    }

    /// exp(min(log_scale, max_log)) * x, with log_scale a 1x1 node.
    Var scale_by_exp(Var x, Var log_scale, S max_log) {
        const S l = value(log_scale)(0, 0);
        const bool clamped = l > max_log;
        const S s = std::exp(clamped ? max_log : l);
        return record(value(x) * s, {x, log_scale}, [x, log_scale, s, clamped](Tape& t, const Mat& g) {
            if (t.requires_grad(x)) t.accumulate(x, g * s);
            if (t.requires_grad(log_scale)) {
                Mat d(1, 1);
                d(0, 0) = clamped ? S(0) : s * (g.array() * t.value(x).array()).sum();
                t.accumulate(log_scale, d);
            }
        });
    }

    /// Mean softmax cross-entropy of rows of `logits` against class indices.
    Var cross_entropy(Var logits, std::span<const int> labels) {
        const Mat& lv = value(logits);
        if (static_cast<std::size_t>(lv.rows()) != labels.size()) throw ShapeError("cross_entropy: label count mismatch");
        Mat probs(lv.rows(), lv.cols());
        S total = 0;
        for (Eigen::Index r = 0; r < lv.rows(); ++r) {
            const int y = labels[static_cast<std::size_t>(r)];
            if (y < 0 || y >= lv.cols()) throw ValidationError("cross_entropy: label out of range");
            const S mx = lv.row(r).maxCoeff();
            probs.row(r) = (lv.row(r).array() - mx).exp();
            const S z = probs.row(r).sum();
            probs.row(r) /= z;
            total += std::log(z) + mx - lv(r, y);
        }
        Mat loss(1, 1);
        loss(0, 0) = total / static_cast<S>(lv.rows());
        std::vector<int> ys(labels.begin(), labels.end());
        return record(std::move(loss), {logits}, [logits, probs = std::move(probs), ys = std::move(ys)](Tape& t, const Mat& g) {
            Mat d = probs;
            for (std::size_t r = 0; r < ys.size(); ++r) d(static_cast<Eigen::Index>(r), ys[r]) -= S(1);
            t.accumulate(logits, d * (g(0, 0) / static_cast<S>(ys.size())));
        });
    }

private:
    using Backward = std::function<void(Tape&, const Mat&)>;

    struct Node {
        Mat own;
        const Mat* ref = nullptr;
        Mat grad;
        Mat* sink = nullptr;
        bool requires_grad = false;
        Backward back;

        const Mat& get() const { return ref ? *ref : own; }
    };

    Var push(Mat value, bool rg, Backward back) {
        Node n;
        n.own = std::move(value);
        n.requires_grad = rg;
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return {nodes_.size() - 1};
    }

    Var record(Mat value, std::initializer_list<Var> inputs, Backward back) {
        bool rg = false;
        for (Var v : inputs) rg = rg || requires_grad(v);
        return push(std::move(value), rg, rg ? std::move(back) : Backward{});
    }

    void accumulate(Var v, const Mat& g) {
        Node& n = nodes_[v.id];
        if (!n.requires_grad) return;
        if (n.grad.size() == 0)
            n.grad = g;
        else
            n.grad += g;
    }

    std::vector<Node> nodes_;
};

}  // namespace promptfuse
