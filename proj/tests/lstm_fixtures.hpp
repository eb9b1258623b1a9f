#pragma once

// LSTM configurations, random inputs and the finite-difference oracle shared
// by the unit tests and the acceptance suite.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "dualrec/lstm.hpp"

namespace dualrec::testing {

// 7 classes, units 4/3, sequence length 5.
inline LstmConfig tiny_config() {
  LstmConfig c;
  c.classes = 7;
  c.vocab_size = 6;
  c.seq_len = 5;
  c.title_len = 3;
  c.movie_embed_dim = 4;
  c.word_embed_dim = 3;
  c.genre_dense_dim = 2;
  c.lstm1_units = 4;
  c.lstm2_units = 3;
  c.batch_size = 4;
  return c;
}

// 20-class copy-last task sized to learn within 10 epochs.
inline LstmConfig learnable_config() {
  LstmConfig c;
  c.classes = 20;
  c.seq_len = 30;
  c.title_len = kTitleLen;
  c.movie_embed_dim = 16;
  c.word_embed_dim = 8;
  c.genre_dense_dim = 8;
  c.lstm1_units = 32;
  c.lstm2_units = 32;
  c.batch_size = 32;
  c.learning_rate = 5e-3;
  c.epochs = 10;
  return c;
}

// Random encoded windows for a config; some titles are all padding.
inline std::vector<EncodedWindow> random_encoded(const LstmConfig& c, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<EncodedWindow> out;
  for (int i = 0; i < count; ++i) {
    EncodedWindow w;
    for (int t = 0; t < c.seq_len; ++t) {
      EncodedMovie m;
      m.class_index = static_cast<ClassIndex>(uniform_below(rng, c.classes));
      const auto real = uniform_below(rng, c.title_len + 1);
      for (int j = 0; j < c.title_len; ++j) {
        m.title_tokens.push_back(j < static_cast<int>(real)
                                     ? 1 + static_cast<TokenId>(uniform_below(rng, c.vocab_size))
                                     : 0);
      }
      m.genre_vec[uniform_below(rng, kGenreCount)] = 1;
      m.genre_vec[uniform_below(rng, kGenreCount)] = 1;
      w.steps.push_back(std::move(m));
    }
    w.target = static_cast<ClassIndex>(uniform_below(rng, c.classes));
    out.push_back(std::move(w));
  }
  return out;
}

// Central-difference oracle, independent of backward().
struct GradCheckResult {
  std::string tensor;
  double max_rel_error = 0;
};

inline std::vector<GradCheckResult> finite_difference_check(LstmModel<double>& model,
                                                     const Batch& batch, bool training) {
  const std::uint64_t mask_seed = 77;
  auto loss_at = [&]() {
    std::mt19937_64 rng(mask_seed);
    return cross_entropy(forward(model, batch, training, rng), batch.targets);
  };
  ForwardCache<double> cache;
  std::mt19937_64 rng(mask_seed);
  forward(model, batch, training, rng, &cache);
  const auto grads = backward(model, batch, cache);

  std::vector<const Mat<double>*> analytic;
  grads.visit([&](const char*, const Mat<double>& g) { analytic.push_back(&g); });
  std::vector<GradCheckResult> out;
  std::size_t k = 0;
  const double h = 1e-5;
  model.params.visit([&](const char* name, Mat<double>& w) {
    const auto& g = *analytic[k++];
    GradCheckResult r{name, 0.0};
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double saved = w.data()[i];
      w.data()[i] = saved + h;
      const double up = loss_at();
      w.data()[i] = saved - h;
      const double down = loss_at();
      w.data()[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = g.data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      r.max_rel_error = std::max(r.max_rel_error, std::abs(a - numeric) / denom);
    }
    out.push_back(r);
  });
  return out;
}

}  // namespace dualrec::testing
