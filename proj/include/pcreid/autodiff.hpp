#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pcreid::nn {

template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using IntMat = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
class ParamBundle;

// Eagerly-evaluated computation tape. Each op computes its value at build
// time and records a closure that routes the output gradient to its parents.
// Values are shared, so wiring a parameter into several frames of a sequence
// costs one node and accumulates one gradient.
template <typename T>
class Graph {
 public:
  using Mat = MatX<T>;
  using MatPtr = std::shared_ptr<const Mat>;

  int leaf(Mat v, bool requires_grad = false) {
    return leaf(std::make_shared<const Mat>(std::move(v)), requires_grad);
  }

  int leaf(MatPtr v, bool requires_grad = false) {
    Node n;
    n.value = std::move(v);
    n.wants = requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  // Parameter leaf; repeated lookups of the same name reuse one node so the
  // gradient accumulates in a single place.
  int param(const ParamBundle<T>& bundle, const std::string& name);

  const Mat& value(int id) const { return *nodes_[id].value; }
  const Mat& grad(int id) const { return nodes_[id].grad; }

  // ---- elementwise / structural ----

  int add(int a, int b) {
    check_same_shape(a, b, "add");
    int id = emit(value(a) + value(b), {a, b});
    record(id, [a, b](Graph& g, const Mat& gr) {
      if (g.wants(a)) g.gbuf(a) += gr;
      if (g.wants(b)) g.gbuf(b) += gr;
    });
    return id;
  }

  int sub(int a, int b) {
    check_same_shape(a, b, "sub");
    int id = emit(value(a) - value(b), {a, b});
    record(id, [a, b](Graph& g, const Mat& gr) {
      if (g.wants(a)) g.gbuf(a) += gr;
      if (g.wants(b)) g.gbuf(b) -= gr;
    });
    return id;
  }

  int cmul(int a, int b) {
    check_same_shape(a, b, "cmul");
    int id = emit(value(a).cwiseProduct(value(b)), {a, b});
    record(id, [a, b](Graph& g, const Mat& gr) {
      if (g.wants(a)) g.gbuf(a) += gr.cwiseProduct(g.value(b));
      if (g.wants(b)) g.gbuf(b) += gr.cwiseProduct(g.value(a));
    });
    return id;
  }

  int scale(int a, T s) {
    int id = emit(value(a) * s, {a});
    record(id, [a, s](Graph& g, const Mat& gr) {
      if (g.wants(a)) g.gbuf(a) += gr * s;
    });
    return id;
  }

  int matmul(int a, int b) {
    if (value(a).cols() != value(b).rows())
      throw std::invalid_argument("matmul: inner dimensions disagree");
    int id = emit(value(a) * value(b), {a, b});
    record(id, [a, b](Graph& g, const Mat& gr) {
      if (g.wants(a)) g.gbuf(a) += gr * g.value(b).transpose();
      if (g.wants(b)) g.gbuf(b) += g.value(a).transpose() * gr;
    });
    return id;
  }

  // Broadcasts a 1xC bias over the rows of a.
  int add_rowvec(int a, int bias) {
    if (value(bias).rows() != 1 || value(bias).cols() != value(a).cols())
      throw std::invalid_argument("add_rowvec: bias shape mismatch");
    Mat v = value(a);
    v.rowwise() += value(bias).row(0);
    int id = emit(std::move(v), {a, bias});
    record(id, [a, bias](Graph& g, const Mat& gr) {
      if (g.wants(a)) g.gbuf(a) += gr;
      if (g.wants(bias)) g.gbuf(bias) += gr.colwise().sum();
    });
    return id;
  }

  int leaky_relu(int a, T slope) {
    const Mat& x = value(a);
    Mat v = x.unaryExpr(
        [slope](T e) { return e >= T(0) ? e : slope * e; });
    int id = emit(std::move(v), {a});
    record(id, [a, slope](Graph& g, const Mat& gr) {
      if (!g.wants(a)) return;
      const Mat& x = g.value(a);
      g.gbuf(a) += gr.cwiseProduct(x.unaryExpr(
          [slope](T e) { return e >= T(0) ? T(1) : slope; }));
    });
    return id;
  }

  int transpose(int a) {
    int id = emit(value(a).transpose(), {a});
    record(id, [a](Graph& g, const Mat& gr) {
      if (g.wants(a)) g.gbuf(a) += gr.transpose();
    });
    return id;
  }

  int reshape(int a, Eigen::Index rows, Eigen::Index cols) {
    if (value(a).size() != rows * cols)
      throw std::invalid_argument("reshape: size mismatch");
    Mat v = Eigen::Map<const Mat>(value(a).data(), rows, cols);
    int id = emit(std::move(v), {a});
    record(id, [a](Graph& g, const Mat& gr) {
      if (!g.wants(a)) return;
      const Mat& x = g.value(a);
      g.gbuf(a) += Eigen::Map<const Mat>(gr.data(), x.rows(), x.cols());
    });
    return id;
  }

  int gather_rows(int a, std::vector<int> idx) {
    const Mat& x = value(a);
    for (int i : idx)
      if (i < 0 || i >= x.rows())
        throw std::invalid_argument("gather_rows: index out of range");
    Mat v(static_cast<Eigen::Index>(idx.size()), x.cols());
    for (size_t r = 0; r < idx.size(); ++r)
      v.row(static_cast<Eigen::Index>(r)) = x.row(idx[r]);
    int id = emit(std::move(v), {a});
    record(id, [a, idx = std::move(idx)](Graph& g, const Mat& gr) {
      if (!g.wants(a)) return;
      Mat& ga = g.gbuf(a);
      for (size_t r = 0; r < idx.size(); ++r)
        ga.row(idx[r]) += gr.row(static_cast<Eigen::Index>(r));
    });
    return id;
  }

  int concat_cols(int a, int b) {
    if (value(a).rows() != value(b).rows())
      throw std::invalid_argument("concat_cols: row counts disagree");
    Mat v(value(a).rows(), value(a).cols() + value(b).cols());
    v << value(a), value(b);
    int id = emit(std::move(v), {a, b});
    const Eigen::Index ca = value(a).cols();
    record(id, [a, b, ca](Graph& g, const Mat& gr) {
      if (g.wants(a)) g.gbuf(a) += gr.leftCols(ca);
      if (g.wants(b)) g.gbuf(b) += gr.rightCols(gr.cols() - ca);
    });
    return id;
  }

  int concat_rows(const std::vector<int>& ids) {
    if (ids.empty()) throw std::invalid_argument("concat_rows: empty list");
    Eigen::Index rows = 0;
    const Eigen::Index cols = value(ids[0]).cols();
    for (int i : ids) {
      if (value(i).cols() != cols)
        throw std::invalid_argument("concat_rows: column counts disagree");
      rows += value(i).rows();
    }
    Mat v(rows, cols);
    Eigen::Index at = 0;
    for (int i : ids) {
      v.middleRows(at, value(i).rows()) = value(i);
      at += value(i).rows();
    }
    int id = emit(std::move(v), ids);
    record(id, [ids](Graph& g, const Mat& gr) {
      Eigen::Index at = 0;
      for (int i : ids) {
        Eigen::Index r = g.value(i).rows();
        if (g.wants(i)) g.gbuf(i) += gr.middleRows(at, r);
        at += r;
      }
    });
    return id;
  }

  int slice_cols(int a, Eigen::Index c0, Eigen::Index len) {
    if (c0 < 0 || c0 + len > value(a).cols())
      throw std::invalid_argument("slice_cols: range out of bounds");
    int id = emit(Mat(value(a).middleCols(c0, len)), {a});
    record(id, [a, c0, len](Graph& g, const Mat& gr) {
      if (g.wants(a)) g.gbuf(a).middleCols(c0, len) += gr;
    });
    return id;
  }

  // Scales row i by mask[i]; used to drop erased rows without reshaping.
  int row_mask(int a, std::vector<T> mask) {
    const Mat& x = value(a);
    if (static_cast<Eigen::Index>(mask.size()) != x.rows())
      throw std::invalid_argument("row_mask: length mismatch");
    Mat v = x;
    for (Eigen::Index i = 0; i < v.rows(); ++i) v.row(i) *= mask[i];
    int id = emit(std::move(v), {a});
    record(id, [a, mask = std::move(mask)](Graph& g, const Mat& gr) {
      if (!g.wants(a)) return;
      Mat& ga = g.gbuf(a);
      for (Eigen::Index i = 0; i < gr.rows(); ++i)
        ga.row(i) += gr.row(i) * mask[static_cast<size_t>(i)];
    });
    return id;
  }

  // ---- reductions ----

  int sum_all(int a) {
    Mat v(1, 1);
    v(0, 0) = value(a).sum();
    int id = emit(std::move(v), {a});
    record(id, [a](Graph& g, const Mat& gr) {
      if (g.wants(a))
        g.gbuf(a).array() += gr(0, 0);
    });
    return id;
  }

  // Channel-wise max over all rows -> 1xC.
  int colwise_max(int a) {
    const Mat& x = value(a);
    if (x.rows() < 1) throw std::invalid_argument("colwise_max: empty input");
    Mat v(1, x.cols());
    auto arg = std::make_shared<std::vector<Eigen::Index>>(x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      Eigen::Index best = 0;
      for (Eigen::Index r = 1; r < x.rows(); ++r)
        if (x(r, c) > x(best, c)) best = r;
      (*arg)[static_cast<size_t>(c)] = best;
      v(0, c) = x(best, c);
    }
    int id = emit(std::move(v), {a});
    record(id, [a, arg](Graph& g, const Mat& gr) {
      if (!g.wants(a)) return;
      Mat& ga = g.gbuf(a);
      for (Eigen::Index c = 0; c < gr.cols(); ++c)
        ga((*arg)[static_cast<size_t>(c)], c) += gr(0, c);
    });
    return id;
  }

  // Max over fixed-size consecutive row groups: (N*k)xC -> NxC.
  int group_max_rows(int a, int group) {
    const Mat& x = value(a);
    if (group < 1 || x.rows() % group != 0)
      throw std::invalid_argument("group_max_rows: bad group size");
    const Eigen::Index n = x.rows() / group;
    Mat v(n, x.cols());
    auto arg = std::make_shared<IntMat>(n, x.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        Eigen::Index best = i * group;
        for (Eigen::Index r = i * group + 1; r < (i + 1) * group; ++r)
          if (x(r, c) > x(best, c)) best = r;
        (*arg)(i, c) = static_cast<int>(best);
        v(i, c) = x(best, c);
      }
    }
    int id = emit(std::move(v), {a});
    record(id, [a, arg](Graph& g, const Mat& gr) {
      if (!g.wants(a)) return;
      Mat& ga = g.gbuf(a);
      for (Eigen::Index i = 0; i < gr.rows(); ++i)
        for (Eigen::Index c = 0; c < gr.cols(); ++c)
          ga((*arg)(i, c), c) += gr(i, c);
    });
    return id;
  }

  int rows_mean(int a) {
    const Mat& x = value(a);
    if (x.rows() < 1) throw std::invalid_argument("rows_mean: empty input");
    Mat v = x.colwise().mean();
    int id = emit(std::move(v), {a});
    record(id, [a](Graph& g, const Mat& gr) {
      if (!g.wants(a)) return;
      const T inv = T(1) / static_cast<T>(g.value(a).rows());
      g.gbuf(a).rowwise() += gr.row(0) * inv;
    });
    return id;
  }

  // ---- row-wise normalizers ----

  int softmax_rows(int a) {
    const Mat& x = value(a);
    Mat v(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      T m = x.row(r).maxCoeff();
      v.row(r) = (x.row(r).array() - m).exp();
      v.row(r) /= v.row(r).sum();
    }
    int id = emit(std::move(v), {a});
    record(id, [a, id](Graph& g, const Mat& gr) {
      if (!g.wants(a)) return;
      const Mat& y = g.value(id);
      Mat& ga = g.gbuf(a);
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        T dot = gr.row(r).cwiseProduct(y.row(r)).sum();
        ga.row(r) +=
            (gr.row(r).array() - dot).matrix().cwiseProduct(y.row(r));
      }
    });
    return id;
  }

  int layer_norm_rows(int a, int gamma, int beta, T eps) {
    const Mat& x = value(a);
    const Eigen::Index d = x.cols();
    if (value(gamma).cols() != d || value(beta).cols() != d)
      throw std::invalid_argument("layer_norm_rows: affine shape mismatch");
    auto xhat = std::make_shared<Mat>(x.rows(), d);
    auto istd = std::make_shared<std::vector<T>>(x.rows());
    Mat v(x.rows(), d);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      T mu = x.row(r).mean();
      T var = (x.row(r).array() - mu).square().mean();
      T is = T(1) / std::sqrt(var + eps);
      (*istd)[static_cast<size_t>(r)] = is;
      xhat->row(r) = (x.row(r).array() - mu) * is;
      v.row(r) = xhat->row(r).cwiseProduct(value(gamma).row(0)) +
                 value(beta).row(0);
    }
    int id = emit(std::move(v), {a, gamma, beta});
    record(id, [a, gamma, beta, xhat, istd](Graph& g, const Mat& gr) {
      const Eigen::Index d = gr.cols();
      if (g.wants(gamma)) {
        Mat dg = Mat::Zero(1, d);
        for (Eigen::Index r = 0; r < gr.rows(); ++r)
          dg.row(0) += gr.row(r).cwiseProduct(xhat->row(r));
        g.gbuf(gamma) += dg;
      }
      if (g.wants(beta)) g.gbuf(beta) += gr.colwise().sum();
      if (g.wants(a)) {
        Mat& ga = g.gbuf(a);
        const Mat& gm = g.value(gamma);
        for (Eigen::Index r = 0; r < gr.rows(); ++r) {
          Mat dxhat = gr.row(r).cwiseProduct(gm.row(0));
          T s1 = dxhat.mean();
          T s2 = dxhat.cwiseProduct(xhat->row(r)).mean();
          T is = (*istd)[static_cast<size_t>(r)];
          ga.row(r) += ((dxhat.array() - s1) -
                        xhat->row(r).array() * s2)
                           .matrix() *
                       is;
        }
      }
    });
    return id;
  }

  // ---- loss heads (scalar 1x1 outputs) ----

  int mse(int a, int b) {
    check_same_shape(a, b, "mse");
    const Eigen::Index n = value(a).size();
    Mat v(1, 1);
    v(0, 0) = (value(a) - value(b)).squaredNorm() / static_cast<T>(n);
    int id = emit(std::move(v), {a, b});
    record(id, [a, b, n](Graph& g, const Mat& gr) {
      Mat diff = (g.value(a) - g.value(b)) *
                 (T(2) * gr(0, 0) / static_cast<T>(n));
      if (g.wants(a)) g.gbuf(a) += diff;
      if (g.wants(b)) g.gbuf(b) -= diff;
    });
    return id;
  }

  // Mean of -log softmax(logits_i)[label_i] over rows.
  int softmax_xent_mean(int logits, std::vector<int> labels) {
    const Mat& x = value(logits);
    if (static_cast<Eigen::Index>(labels.size()) != x.rows())
      throw std::invalid_argument("softmax_xent_mean: label count mismatch");
    for (int l : labels)
      if (l < 0 || l >= x.cols())
        throw std::invalid_argument("softmax_xent_mean: label out of range");
    auto probs = std::make_shared<Mat>(x.rows(), x.cols());
    T loss = T(0);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      T m = x.row(r).maxCoeff();
      Eigen::Array<T, 1, Eigen::Dynamic> e = (x.row(r).array() - m).exp();
      T z = e.sum();
      probs->row(r) = (e / z).matrix();
      loss += std::log(z) + m - x(r, labels[static_cast<size_t>(r)]);
    }
    Mat v(1, 1);
    v(0, 0) = loss / static_cast<T>(x.rows());
    int id = emit(std::move(v), {logits});
    record(id, [logits, probs, labels = std::move(labels)](Graph& g,
                                                           const Mat& gr) {
      if (!g.wants(logits)) return;
      Mat d = *probs;
      for (Eigen::Index r = 0; r < d.rows(); ++r)
        d(r, labels[static_cast<size_t>(r)]) -= T(1);
      g.gbuf(logits) += d * (gr(0, 0) / static_cast<T>(d.rows()));
    });
    return id;
  }

  // Symmetric averaged nearest-neighbor distance between two point sets
  // (rows are points). Non-squared norms; zero-distance pairs get a zero
  // subgradient.
  int chamfer(int a, int b) {
    const Mat& pa = value(a);
    const Mat& pb = value(b);
    if (pa.rows() < 1 || pb.rows() < 1)
      throw std::invalid_argument("chamfer: empty cloud");
    if (pa.cols() != pb.cols())
      throw std::invalid_argument("chamfer: dimension mismatch");
    auto nn_ab = std::make_shared<std::vector<Eigen::Index>>(pa.rows());
    auto nn_ba = std::make_shared<std::vector<Eigen::Index>>(pb.rows());
    auto nearest = [](const Mat& from, const Mat& to,
                      std::vector<Eigen::Index>& nn) {
      T total = T(0);
      for (Eigen::Index i = 0; i < from.rows(); ++i) {
        T best = std::numeric_limits<T>::infinity();
        Eigen::Index bj = 0;
        for (Eigen::Index j = 0; j < to.rows(); ++j) {
          T d2 = (from.row(i) - to.row(j)).squaredNorm();
          if (d2 < best) {
            best = d2;
            bj = j;
          }
        }
        nn[static_cast<size_t>(i)] = bj;
        total += std::sqrt(best);
      }
      return total / static_cast<T>(from.rows());
    };
    Mat v(1, 1);
    v(0, 0) = nearest(pa, pb, *nn_ab) + nearest(pb, pa, *nn_ba);
    int id = emit(std::move(v), {a, b});
    record(id, [a, b, nn_ab, nn_ba](Graph& g, const Mat& gr) {
      const Mat& pa = g.value(a);
      const Mat& pb = g.value(b);
      const T s = gr(0, 0);
      const T wa = s / static_cast<T>(pa.rows());
      const T wb = s / static_cast<T>(pb.rows());
      const bool da = g.wants(a);
      const bool db = g.wants(b);
      if (!da && !db) return;
      for (Eigen::Index i = 0; i < pa.rows(); ++i) {
        Eigen::Index j = (*nn_ab)[static_cast<size_t>(i)];
        Mat u = pa.row(i) - pb.row(j);
        T d = u.norm();
        if (d <= T(0)) continue;
        u *= wa / d;
        if (da) g.gbuf(a).row(i) += u;
        if (db) g.gbuf(b).row(j) -= u;
      }
      for (Eigen::Index j = 0; j < pb.rows(); ++j) {
        Eigen::Index i = (*nn_ba)[static_cast<size_t>(j)];
        Mat u = pb.row(j) - pa.row(i);
        T d = u.norm();
        if (d <= T(0)) continue;
        u *= wb / d;
        if (db) g.gbuf(b).row(j) += u;
        if (da) g.gbuf(a).row(i) -= u;
      }
    });
    return id;
  }

  // Batch-hard triplet: per anchor the hardest positive (max same-label
  // distance) and hardest negative (min other-label distance); hinge with
  // margin, averaged over anchors that have at least one positive.
  int batch_hard_triplet(int emb, const std::vector<int>& labels, T margin) {
    const Mat& e = value(emb);
    if (static_cast<Eigen::Index>(labels.size()) != e.rows())
      throw std::invalid_argument("batch_hard_triplet: label count mismatch");
    bool two_labels = false;
    for (size_t i = 1; i < labels.size(); ++i)
      if (labels[i] != labels[0]) two_labels = true;
    if (!two_labels)
      throw std::invalid_argument("batch_hard_triplet: needs >= 2 labels");
    const Eigen::Index n = e.rows();
    Mat dist(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      dist(i, i) = T(0);
      for (Eigen::Index j = i + 1; j < n; ++j) {
        T d = (e.row(i) - e.row(j)).norm();
        dist(i, j) = d;
        dist(j, i) = d;
      }
    }
    struct Anchor {
      Eigen::Index a, pos, neg;
      T d_pos, d_neg;
      bool active;
    };
    auto anchors = std::make_shared<std::vector<Anchor>>();
    T loss = T(0);
    for (Eigen::Index a = 0; a < n; ++a) {
      Eigen::Index pos = -1, neg = -1;
      T dp = -std::numeric_limits<T>::infinity();
      T dn = std::numeric_limits<T>::infinity();
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == a) continue;
        if (labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(a)]) {
          if (dist(a, j) > dp) {
            dp = dist(a, j);
            pos = j;
          }
        } else if (dist(a, j) < dn) {
          dn = dist(a, j);
          neg = j;
        }
      }
      if (pos < 0) continue;  // singleton label: no positive pair
      T h = dp - dn + margin;
      bool active = h > T(0);
      anchors->push_back({a, pos, neg, dp, dn, active});
      if (active) loss += h;
    }
    if (anchors->empty())
      throw std::invalid_argument("batch_hard_triplet: all anchors skipped");
    Mat v(1, 1);
    v(0, 0) = loss / static_cast<T>(anchors->size());
    int id = emit(std::move(v), {emb});
    record(id, [emb, anchors](Graph& g, const Mat& gr) {
      if (!g.wants(emb)) return;
      const Mat& e = g.value(emb);
      Mat& ge = g.gbuf(emb);
      const T s = gr(0, 0) / static_cast<T>(anchors->size());
      for (const auto& an : *anchors) {
        if (!an.active) continue;
        if (an.d_pos > T(0)) {
          Mat u = (e.row(an.a) - e.row(an.pos)) * (s / an.d_pos);
          ge.row(an.a) += u;
          ge.row(an.pos) -= u;
        }
        if (an.d_neg > T(0)) {
          Mat u = (e.row(an.a) - e.row(an.neg)) * (s / an.d_neg);
          ge.row(an.a) -= u;
          ge.row(an.neg) += u;
        }
      }
    });
    return id;
  }

  // Graph convolution over edges (i, j): per output channel the max over
  // neighbors of LeakyReLU([f_i, f_j - f_i] * kernel). The activation is
  // monotone, so the max is taken on pre-activations and only the winning
  // edge per (point, channel) is kept for the backward pass.
  int edge_conv(int feats, const IntMat& neighbors, int kernel, T slope) {
    const Mat& f = value(feats);
    const Mat& k = value(kernel);
    const Eigen::Index n = f.rows();
    const Eigen::Index din = f.cols();
    const int kk = static_cast<int>(neighbors.cols());
    if (neighbors.rows() != n)
      throw std::invalid_argument("edge_conv: graph/feature row mismatch");
    if (k.rows() != 2 * din)
      throw std::invalid_argument("edge_conv: kernel input width mismatch");
    const Eigen::Index dout = k.cols();

    Mat gathered(n * kk, 2 * din);
    for (Eigen::Index i = 0; i < n; ++i)
      for (int j = 0; j < kk; ++j) {
        auto row = gathered.row(i * kk + j);
        row.head(din) = f.row(i);
        row.tail(din) = f.row(neighbors(i, j)) - f.row(i);
      }
    Mat pre = gathered * k;

    Mat v(n, dout);
    auto winner = std::make_shared<IntMat>(n, dout);  // winning neighbor index
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index c = 0; c < dout; ++c) {
        Eigen::Index best = i * kk;
        for (int j = 1; j < kk; ++j)
          if (pre(i * kk + j, c) > pre(best, c)) best = i * kk + j;
        (*winner)(i, c) = neighbors(i, static_cast<int>(best - i * kk));
        T m = pre(best, c);
        v(i, c) = m >= T(0) ? m : slope * m;
      }
    }
    int id = emit(std::move(v), {feats, kernel});
    record(id, [feats, kernel, winner, slope, id](Graph& g, const Mat& gr) {
      const Mat& f = g.value(feats);
      const Mat& k = g.value(kernel);
      const Mat& out = g.value(id);
      const Eigen::Index din = f.cols();
      const Eigen::Index dout = k.cols();
      const bool wf = g.wants(feats);
      const bool wk = g.wants(kernel);
      if (!wf && !wk) return;
      Mat kt = k.transpose();  // rows contiguous per output channel
      Mat kgt = wk ? Mat::Zero(dout, 2 * din) : Mat();
      Mat fg = wf ? Mat::Zero(f.rows(), din) : Mat();
      for (Eigen::Index i = 0; i < gr.rows(); ++i) {
        for (Eigen::Index c = 0; c < dout; ++c) {
          T gv = gr(i, c);
          if (gv == T(0)) continue;
          if (out(i, c) < T(0)) gv *= slope;
          const int j = (*winner)(i, c);
          if (wk) {
            kgt.row(c).head(din) += gv * f.row(i);
            kgt.row(c).tail(din) += gv * (f.row(j) - f.row(i));
          }
          if (wf) {
            fg.row(i) +=
                gv * (kt.row(c).head(din) - kt.row(c).tail(din));
            fg.row(j) += gv * kt.row(c).tail(din);
          }
        }
      }
      if (wk) g.gbuf(kernel) += kgt.transpose();
      if (wf) g.gbuf(feats) += fg;
    });
    return id;
  }

  // ---- execution ----

  bool wants(int id) const { return nodes_[id].wants; }

  void backward(int id) {
    Mat seed = Mat::Ones(value(id).rows(), value(id).cols());
    backward(id, seed);
  }

  void backward(int id, const Mat& seed) {
    if (seed.rows() != value(id).rows() || seed.cols() != value(id).cols())
      throw std::invalid_argument("backward: seed shape mismatch");
    gbuf(id) += seed;
    for (int i = id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.pull && n.grad.size() != 0) n.pull(*this, n.grad);
    }
  }

  void accumulate_param_grads(ParamBundle<T>& bundle) const;

 private:
  struct Node {
    MatPtr value;
    Mat grad;
    std::function<void(Graph&, const Mat&)> pull;
    bool wants = false;
  };

  Mat& gbuf(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.size() == 0)
      n.grad = Mat::Zero(n.value->rows(), n.value->cols());
    return n.grad;
  }

  int emit(Mat v, const std::vector<int>& parents) {
    Node n;
    n.value = std::make_shared<const Mat>(std::move(v));
    for (int p : parents)
      if (nodes_[static_cast<size_t>(p)].wants) n.wants = true;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  void record(int id, std::function<void(Graph&, const Mat&)> pull) {
    if (nodes_[static_cast<size_t>(id)].wants)
      nodes_[static_cast<size_t>(id)].pull = std::move(pull);
  }

  void check_same_shape(int a, int b, const char* what) const {
    if (value(a).rows() != value(b).rows() ||
        value(a).cols() != value(b).cols())
      throw std::invalid_argument(std::string(what) + ": shape mismatch");
  }

  std::vector<Node> nodes_;
  std::map<std::string, int> param_nodes_;

  friend class ParamBundle<T>;

 public:
  const std::map<std::string, int>& param_nodes() const {
    return param_nodes_;
  }
};

// y = x * weight + bias (bias broadcast over rows).
template <typename T>
int affine(Graph<T>& g, int x, int weight, int bias) {
  return g.add_rowvec(g.matmul(x, weight), bias);
}

}  // namespace pcreid::nn
