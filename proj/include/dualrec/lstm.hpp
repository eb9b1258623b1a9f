#pragma once

/// @file lstm.hpp
/// @brief Multimodal two-layer LSTM next-movie classifier.
///
/// Each timestep fuses three views of a movie into one vector:
///   movie-id embedding | masked mean of title word embeddings | ReLU(genre dense)
/// The fused sequence runs through an LSTM that returns every state, then a
/// second LSTM whose final state feeds a dense softmax over the catalog.
/// Inverted dropout is applied to both LSTM outputs while training.
///
/// The model is templated on the scalar so training can run in float and
/// gradient checks in double. Gradients are computed by hand (BPTT) and
/// checked against central finite differences in the test suite.

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dualrec/dataset.hpp"
#include "dualrec/error.hpp"
#include "dualrec/features.hpp"
#include "dualrec/random.hpp"

namespace dualrec {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LstmConfig {
  int classes = 1000;
  int vocab_size = kVocabCap;  // word table has vocab_size + 1 rows (row 0 = pad)
  int seq_len = kWindowLen;
  int title_len = kTitleLen;
  int movie_embed_dim = 128;
  int word_embed_dim = 64;
  int genre_dense_dim = 64;
  int lstm1_units = 256;
  int lstm2_units = 128;
  double dropout = 0.3;
  int epochs = 10;
  int batch_size = 256;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;  // global gradient norm; <= 0 disables
  std::uint64_t seed = 0;

  int fused_dim() const {
    return movie_embed_dim + word_embed_dim + genre_dense_dim;
  }

  void validate() const {
    auto positive = [](int v, const char* name) {
      if (v <= 0) throw std::invalid_argument(std::string("LstmConfig.") + name + " must be positive");
    };
    positive(classes, "classes");
    positive(seq_len, "seq_len");
    positive(title_len, "title_len");
    positive(movie_embed_dim, "movie_embed_dim");
    positive(word_embed_dim, "word_embed_dim");
    positive(genre_dense_dim, "genre_dense_dim");
    positive(lstm1_units, "lstm1_units");
    positive(lstm2_units, "lstm2_units");
    positive(batch_size, "batch_size");
    if (vocab_size < 0) throw std::invalid_argument("LstmConfig.vocab_size must be >= 0");
    if (epochs < 0) throw std::invalid_argument("LstmConfig.epochs must be >= 0");
    if (dropout < 0 || dropout >= 1) throw std::invalid_argument("LstmConfig.dropout must be in [0, 1)");
    if (!(learning_rate > 0)) throw std::invalid_argument("LstmConfig.learning_rate must be positive");
  }
};

// Gate blocks are laid out [input | forget | cell | output] along columns.
template <typename T>
struct LstmParams {
  Mat<T> movie_emb;  // classes x movie_embed_dim
  Mat<T> word_emb;   // (vocab_size + 1) x word_embed_dim
  Mat<T> genre_w;    // 18 x genre_dense_dim
  Mat<T> genre_b;    // 1 x genre_dense_dim
  Mat<T> w1;         // fused_dim x 4*lstm1
  Mat<T> u1;         // lstm1 x 4*lstm1
  Mat<T> b1;         // 1 x 4*lstm1
  Mat<T> w2;         // lstm1 x 4*lstm2
  Mat<T> u2;         // lstm2 x 4*lstm2
  Mat<T> b2;         // 1 x 4*lstm2
  Mat<T> out_w;      // lstm2 x classes
  Mat<T> out_b;      // 1 x classes

  template <typename Self, typename Fn>
  static void visit_impl(Self& self, Fn&& fn) {
    fn("movie_emb", self.movie_emb);
    fn("word_emb", self.word_emb);
    fn("genre_w", self.genre_w);
    fn("genre_b", self.genre_b);
    fn("lstm1_w", self.w1);
    fn("lstm1_u", self.u1);
    fn("lstm1_b", self.b1);
    fn("lstm2_w", self.w2);
    fn("lstm2_u", self.u2);
    fn("lstm2_b", self.b2);
    fn("out_w", self.out_w);
    fn("out_b", self.out_b);
  }
  template <typename Fn>
  void visit(Fn&& fn) {
    visit_impl(*this, std::forward<Fn>(fn));
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    visit_impl(*this, std::forward<Fn>(fn));
  }

  static LstmParams shaped(const LstmConfig& c) {
    LstmParams p;
    p.movie_emb = Mat<T>::Zero(c.classes, c.movie_embed_dim);
    p.word_emb = Mat<T>::Zero(c.vocab_size + 1, c.word_embed_dim);
    p.genre_w = Mat<T>::Zero(kGenreCount, c.genre_dense_dim);
    p.genre_b = Mat<T>::Zero(1, c.genre_dense_dim);
    p.w1 = Mat<T>::Zero(c.fused_dim(), 4 * c.lstm1_units);
    p.u1 = Mat<T>::Zero(c.lstm1_units, 4 * c.lstm1_units);
    p.b1 = Mat<T>::Zero(1, 4 * c.lstm1_units);
    p.w2 = Mat<T>::Zero(c.lstm1_units, 4 * c.lstm2_units);
    p.u2 = Mat<T>::Zero(c.lstm2_units, 4 * c.lstm2_units);
    p.b2 = Mat<T>::Zero(1, 4 * c.lstm2_units);
    p.out_w = Mat<T>::Zero(c.lstm2_units, c.classes);
    p.out_b = Mat<T>::Zero(1, c.classes);
    return p;
  }

  LstmParams zeros_like() const {
    LstmParams z = *this;
    z.visit([](const char*, Mat<T>& m) { m.setZero(); });
    return z;
  }

  bool all_finite() const {
    bool ok = true;
    visit([&](const char*, const Mat<T>& m) { ok = ok && m.allFinite(); });
    return ok;
  }
};

template <typename T>
struct AdamState {
  LstmParams<T> m;
  LstmParams<T> v;
  std::int64_t step = 0;
};

template <typename T>
struct LstmModel {
  LstmConfig config;
  LstmParams<T> params;
  AdamState<T> adam;
  std::mt19937_64 rng;
  int epochs_completed = 0;
};

namespace detail {

// Box-Muller on the portable uniform source.
inline double standard_normal(std::mt19937_64& rng) {
  double u1 = uniform_unit(rng);
  while (u1 <= 0.0) u1 = uniform_unit(rng);
  const double u2 = uniform_unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

template <typename T>
void fill_uniform(Mat<T>& m, double limit, std::mt19937_64& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<T>((2.0 * uniform_unit(rng) - 1.0) * limit);
  }
}

template <typename T>
void fill_glorot(Mat<T>& m, std::mt19937_64& rng) {
  fill_uniform(m, std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols())), rng);
}

// Rows x cols with orthonormal rows (rows <= cols) or columns (rows > cols).
template <typename T>
void fill_orthogonal(Mat<T>& m, std::mt19937_64& rng) {
  const auto rows = m.rows();
  const auto cols = m.cols();
  const bool transpose = rows < cols;
  const auto tall = transpose ? cols : rows;
  const auto narrow = transpose ? rows : cols;
  Eigen::MatrixXd a(tall, narrow);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = standard_normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(tall, narrow);
  // Sign fix so the factorization is unique.
  Eigen::MatrixXd r = qr.matrixQR().topRows(narrow).template triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < narrow; ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  if (transpose) {
    m = q.transpose().template cast<T>();
  } else {
    m = q.template cast<T>();
  }
}

}  // namespace detail

/// Fresh parameters, fully determined by `seed`: embeddings U(-0.05, 0.05),
/// input and dense kernels Glorot-uniform, recurrent kernels orthogonal,
/// forget-gate biases 1 and every other bias 0.
template <typename T = float>
LstmModel<T> init_model(LstmConfig config, std::uint64_t seed) {
  config.validate();
  config.seed = seed;
  LstmModel<T> model;
  model.config = config;
  model.params = LstmParams<T>::shaped(config);
  std::mt19937_64 rng(derive_seed(seed, "init"));
  auto& p = model.params;
  detail::fill_uniform(p.movie_emb, 0.05, rng);
  detail::fill_uniform(p.word_emb, 0.05, rng);
  detail::fill_glorot(p.genre_w, rng);
  detail::fill_glorot(p.w1, rng);
  detail::fill_orthogonal(p.u1, rng);
  detail::fill_glorot(p.w2, rng);
  detail::fill_orthogonal(p.u2, rng);
  detail::fill_glorot(p.out_w, rng);
  p.b1.block(0, config.lstm1_units, 1, config.lstm1_units).setOnes();
  p.b2.block(0, config.lstm2_units, 1, config.lstm2_units).setOnes();
  model.adam = {p.zeros_like(), p.zeros_like(), 0};
  model.rng.seed(derive_seed(seed, "dropout"));
  return model;
}

// Flattened, timestep-major view of a batch of encoded windows.
struct Batch {
  int size = 0;
  int seq_len = 0;
  int title_len = 0;
  std::vector<ClassIndex> classes;  // [b * seq_len + t]
  std::vector<TokenId> tokens;      // [(b * seq_len + t) * title_len + j]
  std::vector<std::uint8_t> genres; // [(b * seq_len + t) * 18 + g]
  std::vector<ClassIndex> targets;  // [b]
};

inline Batch make_batch(std::span<const EncodedWindow> windows) {
  Batch batch;
  batch.size = static_cast<int>(windows.size());
  if (windows.empty()) return batch;
  batch.seq_len = static_cast<int>(windows[0].steps.size());
  batch.title_len = batch.seq_len > 0
                        ? static_cast<int>(windows[0].steps[0].title_tokens.size())
                        : 0;
  for (const auto& w : windows) {
    if (static_cast<int>(w.steps.size()) != batch.seq_len) {
      throw std::invalid_argument("make_batch: windows have different lengths");
    }
    for (const auto& s : w.steps) {
      if (static_cast<int>(s.title_tokens.size()) != batch.title_len) {
        throw std::invalid_argument("make_batch: title lengths differ");
      }
      batch.classes.push_back(s.class_index);
      batch.tokens.insert(batch.tokens.end(), s.title_tokens.begin(), s.title_tokens.end());
      batch.genres.insert(batch.genres.end(), s.genre_vec.begin(), s.genre_vec.end());
    }
    batch.targets.push_back(w.target);
  }
  return batch;
}

inline Batch make_batch(std::span<const ClassWindow> windows, const FeatureTable& table) {
  std::vector<EncodedWindow> enc;
  enc.reserve(windows.size());
  for (const auto& w : windows) enc.push_back(table.expand(w));
  return make_batch(std::span<const EncodedWindow>(enc));
}

// Activations retained by forward() for backward().
template <typename T>
struct ForwardCache {
  bool training = false;
  std::vector<Mat<T>> x;           // per t: B x fused
  std::vector<Mat<T>> genre_act;   // per t: B x genre_dense (post-ReLU)
  std::vector<std::vector<int>> title_count;  // per t, per b: non-pad tokens
  std::vector<Mat<T>> gates1, c1, tc1, h1, mask1, h1d;
  std::vector<Mat<T>> gates2, c2, tc2, h2;
  Mat<T> mask2, h2d;
  Mat<T> probs;  // B x classes
};

namespace detail {

template <typename T>
T sigmoid(T z) {
  return T(1) / (T(1) + std::exp(-z));
}

template <typename T>
void lstm_cell(const Mat<T>& z, const Mat<T>& c_prev, int units, Mat<T>& gates,
               Mat<T>& c, Mat<T>& tc, Mat<T>& h) {
  const auto rows = z.rows();
  gates.resize(rows, 4 * units);
  c.resize(rows, units);
  tc.resize(rows, units);
  h.resize(rows, units);
  for (Eigen::Index b = 0; b < rows; ++b) {
    for (int j = 0; j < units; ++j) {
      const T i = sigmoid(z(b, j));
      const T f = sigmoid(z(b, units + j));
      const T g = std::tanh(z(b, 2 * units + j));
      const T o = sigmoid(z(b, 3 * units + j));
      gates(b, j) = i;
      gates(b, units + j) = f;
      gates(b, 2 * units + j) = g;
      gates(b, 3 * units + j) = o;
      c(b, j) = f * c_prev(b, j) + i * g;
      tc(b, j) = std::tanh(c(b, j));
      h(b, j) = o * tc(b, j);
    }
  }
}

template <typename T>
Mat<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate,
                    std::mt19937_64& rng) {
  Mat<T> m(rows, cols);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = uniform_unit(rng) < rate ? T(0) : keep_scale;
  }
  return m;
}

// Backprop through one LSTM layer. `dh_ext[t]` is the loss gradient w.r.t.
// the layer's output at step t (may be empty for "no gradient").
template <typename T>
std::vector<Mat<T>> lstm_backward(const std::vector<Mat<T>>& inputs,
                                  const std::vector<Mat<T>>& gates,
                                  const std::vector<Mat<T>>& c,
                                  const std::vector<Mat<T>>& tc,
                                  const std::vector<Mat<T>>& h,
                                  const std::vector<Mat<T>>& dh_ext,
                                  const Mat<T>& w, const Mat<T>& u, int units,
                                  Mat<T>& dw, Mat<T>& du, Mat<T>& db) {
  const int steps = static_cast<int>(inputs.size());
  const auto rows = inputs[0].rows();
  std::vector<Mat<T>> dx(steps);
  Mat<T> dh_next = Mat<T>::Zero(rows, units);
  Mat<T> dc_next = Mat<T>::Zero(rows, units);
  Mat<T> dz(rows, 4 * units);
  for (int t = steps - 1; t >= 0; --t) {
    Mat<T> dh = dh_next;
    if (dh_ext[t].size() != 0) dh += dh_ext[t];
    for (Eigen::Index b = 0; b < rows; ++b) {
      for (int j = 0; j < units; ++j) {
        const T i = gates[t](b, j);
        const T f = gates[t](b, units + j);
        const T g = gates[t](b, 2 * units + j);
        const T o = gates[t](b, 3 * units + j);
        const T tcv = tc[t](b, j);
        const T c_prev = t > 0 ? c[t - 1](b, j) : T(0);
        const T dhv = dh(b, j);
        const T dc = dc_next(b, j) + dhv * o * (T(1) - tcv * tcv);
        dz(b, j) = dc * g * i * (T(1) - i);
        dz(b, units + j) = dc * c_prev * f * (T(1) - f);
        dz(b, 2 * units + j) = dc * i * (T(1) - g * g);
        dz(b, 3 * units + j) = dhv * tcv * o * (T(1) - o);
        dc_next(b, j) = dc * f;
      }
    }
    dw.noalias() += inputs[t].transpose() * dz;
    if (t > 0) du.noalias() += h[t - 1].transpose() * dz;
    db += dz.colwise().sum();
    dx[t].noalias() = dz * w.transpose();
    dh_next.noalias() = dz * u.transpose();
  }
  return dx;
}

template <typename T>
std::string describe_non_finite(const ForwardCache<T>& cache) {
  std::ostringstream ss;
  ss << "non-finite activation in forward pass:";
  for (std::size_t t = 0; t < cache.h1.size(); ++t) {
    if (!cache.x[t].allFinite()) ss << " fused[t=" << t << "]";
    if (!cache.h1[t].allFinite()) ss << " lstm1[t=" << t << "]";
    if (!cache.h2[t].allFinite()) ss << " lstm2[t=" << t << "]";
  }
  if (!cache.probs.allFinite()) ss << " softmax";
  return ss.str();
}

}  // namespace detail

/// Runs the network on a batch and returns class probabilities (batch x
/// classes). Dropout masks are drawn from `rng` only when `training` is set;
/// with training off the call is a pure function of parameters and input.
template <typename T>
Mat<T> forward(const LstmModel<T>& model, const Batch& batch, bool training,
               std::mt19937_64& rng, ForwardCache<T>* cache_out = nullptr) {
  const auto& c = model.config;
  const auto& p = model.params;
  if (batch.size == 0) return Mat<T>(0, c.classes);
  if (batch.title_len != c.title_len) {
    throw std::invalid_argument("forward: title length does not match config");
  }
  const int B = batch.size;
  const int steps = batch.seq_len;
  const int L = batch.title_len;
  const int Em = c.movie_embed_dim;
  const int Ew = c.word_embed_dim;
  const int G = c.genre_dense_dim;
  const int H1 = c.lstm1_units;
  const int H2 = c.lstm2_units;

  ForwardCache<T> local;
  ForwardCache<T>& k = cache_out ? *cache_out : local;
  k = ForwardCache<T>{};
  k.training = training;
  k.x.resize(steps);
  k.genre_act.resize(steps);
  k.title_count.assign(steps, std::vector<int>(B, 0));
  k.gates1.resize(steps);
  k.c1.resize(steps);
  k.tc1.resize(steps);
  k.h1.resize(steps);
  k.mask1.resize(steps);
  k.h1d.resize(steps);
  k.gates2.resize(steps);
  k.c2.resize(steps);
  k.tc2.resize(steps);
  k.h2.resize(steps);

  Mat<T> genre_in(B, kGenreCount);
  Mat<T> c_prev1 = Mat<T>::Zero(B, H1);
  Mat<T> h_prev1 = Mat<T>::Zero(B, H1);
  for (int t = 0; t < steps; ++t) {
    Mat<T>& x = k.x[t];
    x.setZero(B, c.fused_dim());
    for (int b = 0; b < B; ++b) {
      const auto idx = static_cast<std::size_t>(b) * steps + t;
      const ClassIndex cls = batch.classes[idx];
      if (cls < 0 || cls >= c.classes) throw std::out_of_range("forward: class index out of range");
      x.row(b).segment(0, Em) = p.movie_emb.row(cls);
      int count = 0;
      for (int j = 0; j < L; ++j) {
        const TokenId tok = batch.tokens[idx * L + j];
        if (tok == 0) continue;
        if (tok < 0 || tok > c.vocab_size) throw std::out_of_range("forward: token id out of range");
        x.row(b).segment(Em, Ew) += p.word_emb.row(tok);
        ++count;
      }
      if (count > 0) x.row(b).segment(Em, Ew) /= static_cast<T>(count);
      k.title_count[t][b] = count;
      for (std::size_t g = 0; g < kGenreCount; ++g) {
        genre_in(b, g) = static_cast<T>(batch.genres[idx * kGenreCount + g]);
      }
    }
    Mat<T> pre = genre_in * p.genre_w;
    pre.rowwise() += p.genre_b.row(0);
    k.genre_act[t] = pre.cwiseMax(T(0));
    x.block(0, Em + Ew, B, G) = k.genre_act[t];

    Mat<T> z = x * p.w1 + h_prev1 * p.u1;
    z.rowwise() += p.b1.row(0);
    detail::lstm_cell(z, c_prev1, H1, k.gates1[t], k.c1[t], k.tc1[t], k.h1[t]);
    c_prev1 = k.c1[t];
    h_prev1 = k.h1[t];
    if (training && c.dropout > 0) {
      k.mask1[t] = detail::dropout_mask<T>(B, H1, c.dropout, rng);
      k.h1d[t] = k.h1[t].cwiseProduct(k.mask1[t]);
    } else {
      k.h1d[t] = k.h1[t];
    }
  }

  Mat<T> c_prev2 = Mat<T>::Zero(B, H2);
  Mat<T> h_prev2 = Mat<T>::Zero(B, H2);
  for (int t = 0; t < steps; ++t) {
    Mat<T> z = k.h1d[t] * p.w2 + h_prev2 * p.u2;
    z.rowwise() += p.b2.row(0);
    detail::lstm_cell(z, c_prev2, H2, k.gates2[t], k.c2[t], k.tc2[t], k.h2[t]);
    c_prev2 = k.c2[t];
    h_prev2 = k.h2[t];
  }
  if (training && c.dropout > 0) {
    k.mask2 = detail::dropout_mask<T>(B, H2, c.dropout, rng);
    k.h2d = h_prev2.cwiseProduct(k.mask2);
  } else {
    k.h2d = h_prev2;
  }

  Mat<T> logits = k.h2d * p.out_w;
  logits.rowwise() += p.out_b.row(0);
  for (int b = 0; b < B; ++b) {
    const T mx = logits.row(b).maxCoeff();
    // Scalar exp: Eigen's packet exp clamps instead of underflowing to 0.
    logits.row(b) = (logits.row(b).array() - mx).unaryExpr([](T v) { return std::exp(v); });
    logits.row(b) /= logits.row(b).sum();
  }
  k.probs = std::move(logits);
  if (!k.probs.allFinite()) throw NumericError(detail::describe_non_finite(k));
  return k.probs;
}

template <typename T>
Mat<T> forward(const LstmModel<T>& model, const Batch& batch) {
  std::mt19937_64 unused;
  return forward(model, batch, false, unused);
}

inline constexpr double kProbFloor = 1e-12;

/// Mean negative log-probability of the targets, floored at 1e-12.
template <typename T>
double cross_entropy(const Mat<T>& probs, std::span<const ClassIndex> targets) {
  if (targets.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t b = 0; b < targets.size(); ++b) {
    const double p = static_cast<double>(probs(static_cast<Eigen::Index>(b), targets[b]));
    sum -= std::log(std::max(p, kProbFloor));
  }
  return sum / static_cast<double>(targets.size());
}

/// Exact gradients of the mean cross-entropy for the batch recorded in
/// `cache`, reusing its dropout masks.
template <typename T>
LstmParams<T> backward(const LstmModel<T>& model, const Batch& batch,
                       const ForwardCache<T>& cache) {
  const auto& c = model.config;
  const auto& p = model.params;
  LstmParams<T> g = p.zeros_like();
  const int B = batch.size;
  if (B == 0) return g;
  const int steps = batch.seq_len;
  const int L = batch.title_len;
  const int Em = c.movie_embed_dim;
  const int Ew = c.word_embed_dim;
  const int G = c.genre_dense_dim;
  const int H1 = c.lstm1_units;
  const int H2 = c.lstm2_units;
  const bool dropped = cache.training && c.dropout > 0;

  Mat<T> dlogits = cache.probs;
  for (int b = 0; b < B; ++b) dlogits(b, batch.targets[b]) -= T(1);
  dlogits /= static_cast<T>(B);

  g.out_w.noalias() = cache.h2d.transpose() * dlogits;
  g.out_b = dlogits.colwise().sum();
  Mat<T> dh2_last = dlogits * p.out_w.transpose();
  if (dropped) dh2_last = dh2_last.cwiseProduct(cache.mask2);

  std::vector<Mat<T>> dh2_ext(steps);
  dh2_ext[steps - 1] = std::move(dh2_last);
  auto dh1d = detail::lstm_backward<T>(cache.h1d, cache.gates2, cache.c2, cache.tc2,
                                       cache.h2, dh2_ext, p.w2, p.u2, H2, g.w2,
                                       g.u2, g.b2);
  std::vector<Mat<T>> dh1_ext(steps);
  for (int t = 0; t < steps; ++t) {
    dh1_ext[t] = dropped ? Mat<T>(dh1d[t].cwiseProduct(cache.mask1[t]))
                         : std::move(dh1d[t]);
  }
  auto dx = detail::lstm_backward<T>(cache.x, cache.gates1, cache.c1, cache.tc1,
                                     cache.h1, dh1_ext, p.w1, p.u1, H1, g.w1,
                                     g.u1, g.b1);

  Mat<T> genre_in(B, kGenreCount);
  for (int t = 0; t < steps; ++t) {
    Mat<T> dgenre = dx[t].block(0, Em + Ew, B, G);
    dgenre = dgenre.cwiseProduct(
        (cache.genre_act[t].array() > T(0)).template cast<T>().matrix());
    for (int b = 0; b < B; ++b) {
      const auto idx = static_cast<std::size_t>(b) * steps + t;
      g.movie_emb.row(batch.classes[idx]) += dx[t].row(b).segment(0, Em);
      const int count = cache.title_count[t][b];
      if (count > 0) {
        const auto dtitle = dx[t].row(b).segment(Em, Ew) / static_cast<T>(count);
        for (int j = 0; j < L; ++j) {
          const TokenId tok = batch.tokens[idx * L + j];
          if (tok != 0) g.word_emb.row(tok) += dtitle;
        }
      }
      for (std::size_t gi = 0; gi < kGenreCount; ++gi) {
        genre_in(b, gi) = static_cast<T>(batch.genres[idx * kGenreCount + gi]);
      }
    }
    g.genre_w.noalias() += genre_in.transpose() * dgenre;
    g.genre_b += dgenre.colwise().sum();
  }
  return g;
}

template <typename T>
double global_norm(const LstmParams<T>& grads) {
  double sq = 0.0;
  grads.visit([&](const char*, const Mat<T>& m) {
    sq += m.template cast<double>().squaredNorm();
  });
  return std::sqrt(sq);
}

/// One Adam step with optional global-norm clipping.
template <typename T>
void adam_update(LstmModel<T>& model, LstmParams<T>& grads) {
  const auto& c = model.config;
  if (c.clip_norm > 0) {
    const double norm = global_norm(grads);
    if (norm > c.clip_norm) {
      const T scale = static_cast<T>(c.clip_norm / norm);
      grads.visit([&](const char*, Mat<T>& m) { m *= scale; });
    }
  }
  auto& st = model.adam;
  ++st.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.step));
  const T lr = static_cast<T>(c.learning_rate);
  const T b1 = static_cast<T>(c.beta1);
  const T b2 = static_cast<T>(c.beta2);
  const T eps = static_cast<T>(c.epsilon);

  std::vector<Mat<T>*> params, gs, ms, vs;
  model.params.visit([&](const char*, Mat<T>& m) { params.push_back(&m); });
  grads.visit([&](const char*, Mat<T>& m) { gs.push_back(&m); });
  st.m.visit([&](const char*, Mat<T>& m) { ms.push_back(&m); });
  st.v.visit([&](const char*, Mat<T>& m) { vs.push_back(&m); });
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i]->array();
    const auto gr = gs[i]->array();
    auto m = ms[i]->array();
    auto v = vs[i]->array();
    m = b1 * m + (T(1) - b1) * gr;
    v = b2 * v + (T(1) - b2) * gr.square();
    w -= lr * (m / static_cast<T>(bc1)) /
         ((v / static_cast<T>(bc2)).sqrt() + eps);
  }
}

struct EpochMetrics {
  int epoch = 0;  // 1-based
  double train_loss = 0;
  double val_loss = 0;
  double train_acc = 0;
  double val_acc = 0;
  double train_top5 = 0;
  double val_top5 = 0;

  bool operator==(const EpochMetrics&) const = default;
};

struct TrainReport {
  std::vector<EpochMetrics> epochs;

  bool operator==(const TrainReport&) const = default;

  std::string to_csv(std::string_view header_comment = {}) const {
    std::ostringstream ss;
    if (!header_comment.empty()) ss << "# " << header_comment << "\n";
    ss << "epoch,train_loss,val_loss,train_acc,val_acc,train_top5_acc,val_top5_acc\n";
    ss << std::setprecision(9);
    for (const auto& e : epochs) {
      ss << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ','
         << e.train_acc << ',' << e.val_acc << ',' << e.train_top5 << ','
         << e.val_top5 << '\n';
    }
    return ss.str();
  }
};

namespace detail {

// Rank of the target (0 = best) with ties resolved toward lower class index.
template <typename T>
int target_rank(const Mat<T>& probs, Eigen::Index row, ClassIndex target) {
  const T pt = probs(row, target);
  int rank = 0;
  for (Eigen::Index j = 0; j < probs.cols(); ++j) {
    const T pj = probs(row, j);
    if (pj > pt || (pj == pt && j < target)) ++rank;
  }
  return rank;
}

}  // namespace detail

struct Evaluation {
  double loss = 0;
  double top1 = 0;
  double top5 = 0;
  std::size_t count = 0;
};

/// Loss and top-1/top-5 accuracy with dropout off.
template <typename T>
Evaluation evaluate_windows(const LstmModel<T>& model,
                            std::span<const ClassWindow> windows,
                            const FeatureTable& table, int batch_size = 256) {
  Evaluation ev;
  double loss_sum = 0;
  std::size_t hit1 = 0;
  std::size_t hit5 = 0;
  for (std::size_t start = 0; start < windows.size(); start += batch_size) {
    const auto n = std::min<std::size_t>(batch_size, windows.size() - start);
    const auto batch = make_batch(windows.subspan(start, n), table);
    const auto probs = forward(model, batch);
    loss_sum += cross_entropy(probs, batch.targets) * static_cast<double>(n);
    for (std::size_t b = 0; b < n; ++b) {
      const int r = detail::target_rank(probs, static_cast<Eigen::Index>(b), batch.targets[b]);
      hit1 += r < 1;
      hit5 += r < 5;
    }
  }
  ev.count = windows.size();
  if (ev.count > 0) {
    ev.loss = loss_sum / static_cast<double>(ev.count);
    ev.top1 = static_cast<double>(hit1) / static_cast<double>(ev.count);
    ev.top5 = static_cast<double>(hit5) / static_cast<double>(ev.count);
  }
  return ev;
}

/// Mini-batch Adam training until model.config.epochs epochs have completed,
/// continuing from model.epochs_completed. Batch order and dropout masks
/// derive from (seed, epoch, batch), so a resumed run replays the same stream.
template <typename T>
TrainReport fit(LstmModel<T>& model, std::span<const ClassWindow> train,
                std::span<const ClassWindow> val, const FeatureTable& table,
                const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  const auto& c = model.config;
  TrainReport report;
  std::vector<std::size_t> order(train.size());
  for (int epoch = model.epochs_completed; epoch < c.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(derive_seed(c.seed, static_cast<std::uint64_t>(epoch) * 2 + 1));
    portable_shuffle(std::span<std::size_t>(order), shuffle_rng);

    double loss_sum = 0;
    std::size_t hit1 = 0;
    std::size_t hit5 = 0;
    std::vector<ClassWindow> chunk;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += c.batch_size, ++batch_index) {
      const auto n = std::min<std::size_t>(c.batch_size, order.size() - start);
      chunk.clear();
      for (std::size_t i = 0; i < n; ++i) chunk.push_back(train[order[start + i]]);
      const auto batch = make_batch(std::span<const ClassWindow>(chunk), table);
      std::mt19937_64 drop_rng(derive_seed(derive_seed(c.seed, "dropout"),
                                           (static_cast<std::uint64_t>(epoch) << 32) | batch_index));
      ForwardCache<T> cache;
      const auto probs = forward(model, batch, true, drop_rng, &cache);
      const double loss = cross_entropy(probs, batch.targets);
      if (!std::isfinite(loss)) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch + 1) +
                           " batch " + std::to_string(batch_index));
      }
      loss_sum += loss * static_cast<double>(n);
      for (std::size_t b = 0; b < n; ++b) {
        const int r = detail::target_rank(probs, static_cast<Eigen::Index>(b), batch.targets[b]);
        hit1 += r < 1;
        hit5 += r < 5;
      }
      auto grads = backward(model, batch, cache);
      adam_update(model, grads);
      if (!model.params.all_finite()) {
        throw NumericError("non-finite parameters after epoch " + std::to_string(epoch + 1) +
                           " batch " + std::to_string(batch_index));
      }
    }
    EpochMetrics m;
    m.epoch = epoch + 1;
    if (!train.empty()) {
      const auto n = static_cast<double>(train.size());
      m.train_loss = loss_sum / n;
      m.train_acc = static_cast<double>(hit1) / n;
      m.train_top5 = static_cast<double>(hit5) / n;
    }
    const auto ev = evaluate_windows(model, val, table, c.batch_size);
    m.val_loss = ev.loss;
    m.val_acc = ev.top1;
    m.val_top5 = ev.top5;
    model.epochs_completed = epoch + 1;
    report.epochs.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return report;
}

struct ScoredClass {
  ClassIndex class_index = 0;
  double probability = 0;
};

/// The k most probable classes, descending, ties toward the lower class index.
template <typename T>
std::vector<ScoredClass> predict_topk(const LstmModel<T>& model,
                                      const EncodedWindow& window, int k) {
  if (k <= 0 || k > model.config.classes) {
    throw std::invalid_argument("predict_topk: k must be in [1, classes]");
  }
  const auto batch = make_batch(std::span<const EncodedWindow>(&window, 1));
  const auto probs = forward(model, batch);
  std::vector<ClassIndex> idx(model.config.classes);
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](ClassIndex a, ClassIndex b) {
    return probs(0, a) != probs(0, b) ? probs(0, a) > probs(0, b) : a < b;
  });
  std::vector<ScoredClass> out;
  out.reserve(k);
  for (int i = 0; i < k; ++i) out.push_back({idx[i], static_cast<double>(probs(0, idx[i]))});
  return out;
}

struct ScoredMovie {
  MovieId movie_id = 0;
  double probability = 0;
};

template <typename T>
std::vector<ScoredMovie> predict_topk(const LstmModel<T>& model,
                                      const EncodedWindow& window, int k,
                                      const Catalog& catalog) {
  std::vector<ScoredMovie> out;
  for (const auto& s : predict_topk(model, window, k)) {
    out.push_back({catalog.movie_id(s.class_index), s.probability});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint: "DRLSTMCK", u32 version, u32 scalar width, config, training
// state, then every tensor (parameters, Adam m, Adam v) as
// name / rows / cols / raw little-endian values.

namespace detail {

template <typename V>
void put_le(std::ostream& out, V value) {
  static_assert(std::is_trivially_copyable_v<V>);
  char bytes[sizeof(V)];
  std::memcpy(bytes, &value, sizeof(V));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(V));
  out.write(bytes, sizeof(V));
}

template <typename V>
V get_le(std::istream& in) {
  char bytes[sizeof(V)];
  if (!in.read(bytes, sizeof(V))) throw DataError("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(V));
  V value;
  std::memcpy(&value, bytes, sizeof(V));
  return value;
}

template <typename T>
void put_tensor(std::ostream& out, std::string_view name, const Mat<T>& m) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) put_le<T>(out, m.data()[i]);
}

template <typename T>
void get_tensor(std::istream& in, std::string_view name, Mat<T>& m) {
  const auto len = get_le<std::uint32_t>(in);
  std::string got(len, '\0');
  if (len > 256 || !in.read(got.data(), len)) throw DataError("checkpoint: bad tensor name");
  if (got != name) throw DataError("checkpoint: expected tensor " + std::string(name) + ", found " + got);
  const auto rows = get_le<std::uint32_t>(in);
  const auto cols = get_le<std::uint32_t>(in);
  if (rows != m.rows() || cols != m.cols()) {
    throw DataError("checkpoint: shape mismatch for " + std::string(name));
  }
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = get_le<T>(in);
}

}  // namespace detail

inline constexpr char kCheckpointMagic[8] = {'D', 'R', 'L', 'S', 'T', 'M', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_checkpoint(std::ostream& out, const LstmModel<T>& model) {
  const auto& c = model.config;
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, sizeof(T));
  for (int v : {c.classes, c.vocab_size, c.seq_len, c.title_len, c.movie_embed_dim,
                c.word_embed_dim, c.genre_dense_dim, c.lstm1_units, c.lstm2_units,
                c.epochs, c.batch_size}) {
    detail::put_le<std::int32_t>(out, v);
  }
  for (double v : {c.dropout, c.learning_rate, c.beta1, c.beta2, c.epsilon, c.clip_norm}) {
    detail::put_le<double>(out, v);
  }
  detail::put_le<std::uint64_t>(out, c.seed);
  detail::put_le<std::int32_t>(out, model.epochs_completed);
  detail::put_le<std::int64_t>(out, model.adam.step);
  std::ostringstream rng_state;
  rng_state << model.rng;
  const auto rs = rng_state.str();
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(rs.size()));
  out.write(rs.data(), static_cast<std::streamsize>(rs.size()));
  model.params.visit([&](const char* name, const Mat<T>& m) { detail::put_tensor(out, name, m); });
  model.adam.m.visit([&](const char* name, const Mat<T>& m) {
    detail::put_tensor(out, std::string("adam_m.") + name, m);
  });
  model.adam.v.visit([&](const char* name, const Mat<T>& m) {
    detail::put_tensor(out, std::string("adam_v.") + name, m);
  });
  if (!out) throw DataError("checkpoint write failed");
}

template <typename T>
LstmModel<T> read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || !std::equal(magic, magic + 8, kCheckpointMagic)) {
    throw DataError("not a model checkpoint");
  }
  if (detail::get_le<std::uint32_t>(in) != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version");
  }
  if (detail::get_le<std::uint32_t>(in) != sizeof(T)) {
    throw DataError("checkpoint scalar width does not match");
  }
  LstmConfig c;
  for (int* v : {&c.classes, &c.vocab_size, &c.seq_len, &c.title_len, &c.movie_embed_dim,
                 &c.word_embed_dim, &c.genre_dense_dim, &c.lstm1_units, &c.lstm2_units,
                 &c.epochs, &c.batch_size}) {
    *v = detail::get_le<std::int32_t>(in);
  }
  for (double* v : {&c.dropout, &c.learning_rate, &c.beta1, &c.beta2, &c.epsilon, &c.clip_norm}) {
    *v = detail::get_le<double>(in);
  }
  c.seed = detail::get_le<std::uint64_t>(in);
  c.validate();
  LstmModel<T> model;
  model.config = c;
  model.epochs_completed = detail::get_le<std::int32_t>(in);
  model.adam.step = detail::get_le<std::int64_t>(in);
  const auto rs_len = detail::get_le<std::uint32_t>(in);
  if (rs_len > 1 << 16) throw DataError("checkpoint: bad rng state");
  std::string rs(rs_len, '\0');
  if (!in.read(rs.data(), rs_len)) throw DataError("checkpoint truncated");
  std::istringstream(rs) >> model.rng;
  model.params = LstmParams<T>::shaped(c);
  model.adam.m = LstmParams<T>::shaped(c);
  model.adam.v = LstmParams<T>::shaped(c);
  model.params.visit([&](const char* name, Mat<T>& m) { detail::get_tensor(in, name, m); });
  model.adam.m.visit([&](const char* name, Mat<T>& m) {
    detail::get_tensor(in, std::string("adam_m.") + name, m);
  });
  model.adam.v.visit([&](const char* name, Mat<T>& m) {
    detail::get_tensor(in, std::string("adam_v.") + name, m);
  });
  return model;
}

template <typename T>
void save_checkpoint(const std::string& path, const LstmModel<T>& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  write_checkpoint(out, model);
}

template <typename T>
LstmModel<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  return read_checkpoint<T>(in);
}

}  // namespace dualrec
