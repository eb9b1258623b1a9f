#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "dualrec/lstm.hpp"
#include "lstm_fixtures.hpp"
#include "synthetic.hpp"

namespace dualrec {
namespace {

using testing::finite_difference_check;
using testing::learnable_config;
using testing::random_encoded;
using testing::tiny_config;

TEST(LstmInit, SameSeedIsBitIdentical) {
  auto a = init_model<float>(tiny_config(), 11);
  auto b = init_model<float>(tiny_config(), 11);
  std::vector<const Mat<float>*> pa, pb;
  a.params.visit([&](const char*, const Mat<float>& m) { pa.push_back(&m); });
  b.params.visit([&](const char*, const Mat<float>& m) { pb.push_back(&m); });
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    ASSERT_EQ(pa[i]->size(), pb[i]->size());
    EXPECT_EQ(0, std::memcmp(pa[i]->data(), pb[i]->data(), sizeof(float) * pa[i]->size()));
  }
  auto c = init_model<float>(tiny_config(), 12);
  EXPECT_FALSE(a.params.w1.isApprox(c.params.w1));
}

TEST(LstmInit, BiasesAndRanges) {
  const auto cfg = tiny_config();
  auto m = init_model<double>(cfg, 3);
  const int h1 = cfg.lstm1_units;
  const int h2 = cfg.lstm2_units;
  for (int j = 0; j < 4 * h1; ++j) {
    EXPECT_EQ(m.params.b1(0, j), (j >= h1 && j < 2 * h1) ? 1.0 : 0.0) << j;
  }
  for (int j = 0; j < 4 * h2; ++j) {
    EXPECT_EQ(m.params.b2(0, j), (j >= h2 && j < 2 * h2) ? 1.0 : 0.0) << j;
  }
  EXPECT_LE(m.params.movie_emb.cwiseAbs().maxCoeff(), 0.05);
  EXPECT_LE(m.params.word_emb.cwiseAbs().maxCoeff(), 0.05);
  // u1 is 4 x 16: orthonormal rows.
  Mat<double> gram = m.params.u1 * m.params.u1.transpose();
  EXPECT_TRUE(gram.isApprox(Mat<double>::Identity(h1, h1), 1e-10));
  EXPECT_TRUE(m.params.out_b.isZero());
  EXPECT_TRUE(m.params.genre_b.isZero());
}

TEST(LstmInit, TinyShapes) {
  LstmConfig c = tiny_config();
  c.classes = 2;
  c.lstm1_units = 3;
  c.lstm2_units = 3;
  auto m = init_model<float>(c, 1);
  EXPECT_EQ(m.params.movie_emb.rows(), 2);
  EXPECT_EQ(m.params.movie_emb.cols(), c.movie_embed_dim);
  EXPECT_EQ(m.params.word_emb.rows(), c.vocab_size + 1);
  EXPECT_EQ(m.params.genre_w.rows(), 18);
  EXPECT_EQ(m.params.w1.rows(), c.fused_dim());
  EXPECT_EQ(m.params.w1.cols(), 12);
  EXPECT_EQ(m.params.u1.rows(), 3);
  EXPECT_EQ(m.params.u1.cols(), 12);
  EXPECT_EQ(m.params.w2.rows(), 3);
  EXPECT_EQ(m.params.out_w.rows(), 3);
  EXPECT_EQ(m.params.out_w.cols(), 2);
  EXPECT_EQ(m.params.out_b.cols(), 2);
}

TEST(LstmInit, DefaultConfigMatchesDeclaredInputShape) {
  LstmConfig c;
  EXPECT_EQ(c.fused_dim(), 256);
  EXPECT_EQ(c.seq_len, 30);
  EXPECT_EQ(c.lstm1_units, 256);
  EXPECT_EQ(c.lstm2_units, 128);
  EXPECT_EQ(c.classes, 1000);
  EXPECT_DOUBLE_EQ(c.dropout, 0.3);
}

TEST(LstmForward, RowsSumToOne) {
  auto cfg = tiny_config();
  cfg.classes = 50;
  auto model = init_model<float>(cfg, 5);
  auto windows = random_encoded(cfg, 16, 9);
  for (auto& w : windows) {
    for (auto& s : w.steps) s.class_index %= cfg.classes;
  }
  const auto batch = make_batch(std::span<const EncodedWindow>(windows));
  std::mt19937_64 rng(1);
  for (bool training : {false, true}) {
    const auto probs = forward(model, batch, training, rng);
    ASSERT_EQ(probs.rows(), 16);
    for (Eigen::Index b = 0; b < probs.rows(); ++b) {
      EXPECT_NEAR(probs.row(b).template cast<double>().sum(), 1.0, 1e-6);
      EXPECT_GE(probs.row(b).minCoeff(), 0.0f);
    }
  }
}

TEST(LstmForward, InferenceIsPure) {
  auto cfg = tiny_config();
  auto model = init_model<float>(cfg, 5);
  auto windows = random_encoded(cfg, 8, 2);
  const auto batch = make_batch(std::span<const EncodedWindow>(windows));
  const auto a = forward(model, batch);
  const auto b = forward(model, batch);
  EXPECT_EQ(0, std::memcmp(a.data(), b.data(), sizeof(float) * a.size()));
}

TEST(LstmForward, DropoutChangesTrainingOutput) {
  auto cfg = tiny_config();
  auto model = init_model<double>(cfg, 5);
  auto windows = random_encoded(cfg, 8, 2);
  const auto batch = make_batch(std::span<const EncodedWindow>(windows));
  std::mt19937_64 rng(3);
  const auto train = forward(model, batch, true, rng);
  const auto infer = forward(model, batch);
  EXPECT_FALSE(train.isApprox(infer, 1e-12));
}

// One step, one unit per layer, hand-set weights; the oracle below is the
// textbook gate arithmetic written out in scalars.
TEST(LstmForward, SingleCellMatchesHandComputation) {
  LstmConfig c;
  c.classes = 2;
  c.vocab_size = 2;
  c.seq_len = 1;
  c.title_len = 2;
  c.movie_embed_dim = 1;
  c.word_embed_dim = 1;
  c.genre_dense_dim = 1;
  c.lstm1_units = 1;
  c.lstm2_units = 1;
  auto model = init_model<double>(c, 0);
  auto& p = model.params;
  p.movie_emb << 0.5, -0.3;
  p.word_emb << 0.9, 0.2, -0.4;  // row 0 is the pad and must not count
  p.genre_w.setZero();
  p.genre_w(2, 0) = 0.7;
  p.genre_w(3, 0) = -0.1;
  p.genre_b << 0.05;
  // w1: 3 x 4 (inputs movie, title, genre; gates i f g o)
  p.w1 << 0.1, 0.2, 0.3, 0.4,
          -0.2, 0.1, 0.5, -0.3,
          0.3, -0.1, 0.2, 0.1;
  p.b1 << 0.01, 1.0, -0.02, 0.03;
  p.w2 << 0.6, -0.5, 0.4, 0.3;
  p.b2 << 0.0, 1.0, 0.1, -0.1;
  p.out_w << 1.5, -0.7;
  p.out_b << 0.2, -0.1;

  EncodedWindow w;
  EncodedMovie m;
  m.class_index = 0;
  m.title_tokens = {2, 0};
  m.genre_vec[2] = 1;
  m.genre_vec[3] = 1;
  w.steps.push_back(m);
  w.target = 1;
  const auto probs = forward(model, make_batch(std::span<const EncodedWindow>(&w, 1)));

  auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  const double x_movie = 0.5;
  const double x_title = -0.4;  // mean over the single non-pad token
  const double x_genre = std::max(0.0, 0.7 - 0.1 + 0.05);
  auto z1 = [&](int g, double b) {
    return x_movie * p.w1(0, g) + x_title * p.w1(1, g) + x_genre * p.w1(2, g) + b;
  };
  const double i1 = sig(z1(0, 0.01));
  const double g1 = std::tanh(z1(2, -0.02));
  const double o1 = sig(z1(3, 0.03));
  const double c1 = i1 * g1;  // f * c_prev vanishes at t = 0
  const double h1 = o1 * std::tanh(c1);
  const double i2 = sig(0.6 * h1);
  const double g2 = std::tanh(0.4 * h1 + 0.1);
  const double o2 = sig(0.3 * h1 - 0.1);
  const double h2 = o2 * std::tanh(i2 * g2);
  const double l0 = 1.5 * h2 + 0.2;
  const double l1 = -0.7 * h2 - 0.1;
  const double p1 = std::exp(l1) / (std::exp(l0) + std::exp(l1));
  EXPECT_NEAR(probs(0, 1), p1, 1e-12);
  EXPECT_NEAR(probs(0, 0), 1.0 - p1, 1e-12);
}

TEST(LstmForward, AllPadTitlePoolsToZero) {
  auto cfg = tiny_config();
  auto model = init_model<double>(cfg, 8);
  auto windows = random_encoded(cfg, 1, 4);
  for (auto& s : windows[0].steps) std::fill(s.title_tokens.begin(), s.title_tokens.end(), 0);
  model.params.word_emb.row(0).setConstant(3.0);
  ForwardCache<double> cache;
  std::mt19937_64 rng;
  forward(model, make_batch(std::span<const EncodedWindow>(windows)), false, rng, &cache);
  for (const auto& x : cache.x) {
    EXPECT_TRUE(x.block(0, cfg.movie_embed_dim, 1, cfg.word_embed_dim).isZero());
  }
}

TEST(LstmLoss, AnalyticValues) {
  Mat<double> uniform = Mat<double>::Constant(1, 1000, 1.0 / 1000);
  std::vector<ClassIndex> t = {3};
  EXPECT_NEAR(cross_entropy(uniform, t), std::log(1000.0), 1e-12);
  EXPECT_NEAR(std::log(1000.0), 6.9078, 1e-4);
  Mat<double> onehot = Mat<double>::Zero(1, 4);
  onehot(0, 3) = 1.0;
  EXPECT_EQ(cross_entropy(onehot, t), 0.0);
  Mat<double> half = Mat<double>::Zero(1, 4);
  half(0, 3) = 0.5;
  half(0, 0) = 0.5;
  EXPECT_NEAR(cross_entropy(half, t), std::log(2.0), 1e-12);
  std::vector<ClassIndex> t0 = {1};
  EXPECT_NEAR(cross_entropy(onehot, t0), -std::log(1e-12), 1e-9);
}

TEST(LstmBackward, GradientShapesMatchParameters) {
  auto model = init_model<double>(tiny_config(), 21);
  auto windows = random_encoded(model.config, 4, 22);
  const auto batch = make_batch(std::span<const EncodedWindow>(windows));
  ForwardCache<double> cache;
  std::mt19937_64 rng(1);
  forward(model, batch, true, rng, &cache);
  const auto grads = backward(model, batch, cache);
  std::vector<std::pair<Eigen::Index, Eigen::Index>> ps, gs;
  model.params.visit([&](const char*, const Mat<double>& m) { ps.emplace_back(m.rows(), m.cols()); });
  grads.visit([&](const char*, const Mat<double>& m) { gs.emplace_back(m.rows(), m.cols()); });
  EXPECT_EQ(ps, gs);
}

TEST(LstmBackward, MatchesFiniteDifferencesInference) {
  auto model = init_model<double>(tiny_config(), 31);
  auto windows = random_encoded(model.config, 4, 32);
  const auto batch = make_batch(std::span<const EncodedWindow>(windows));
  for (const auto& r : finite_difference_check(model, batch, false)) {
    EXPECT_LT(r.max_rel_error, 1e-4) << r.tensor;
  }
}

TEST(LstmBackward, MatchesFiniteDifferencesWithDropout) {
  auto model = init_model<double>(tiny_config(), 41);
  auto windows = random_encoded(model.config, 4, 42);
  const auto batch = make_batch(std::span<const EncodedWindow>(windows));
  for (const auto& r : finite_difference_check(model, batch, true)) {
    EXPECT_LT(r.max_rel_error, 1e-4) << r.tensor;
  }
}

TEST(LstmBackward, PerfectFitHasZeroOutputGradients) {
  auto model = init_model<double>(tiny_config(), 51);
  auto windows = random_encoded(model.config, 3, 52);
  for (auto& w : windows) w.target = 2;
  model.params.out_b(0, 2) = 1000.0;
  const auto batch = make_batch(std::span<const EncodedWindow>(windows));
  ForwardCache<double> cache;
  std::mt19937_64 rng;
  const auto probs = forward(model, batch, false, rng, &cache);
  EXPECT_EQ(cross_entropy(probs, batch.targets), 0.0);
  const auto grads = backward(model, batch, cache);
  EXPECT_TRUE(grads.out_w.isZero(0.0));
  EXPECT_TRUE(grads.out_b.isZero(0.0));
}

TEST(LstmPredict, TopKOrderAndRange) {
  auto cfg = tiny_config();
  auto model = init_model<float>(cfg, 61);
  auto w = random_encoded(cfg, 1, 62)[0];
  const auto all = predict_topk(model, w, cfg.classes);
  ASSERT_EQ(all.size(), static_cast<std::size_t>(cfg.classes));
  std::vector<ClassIndex> seen;
  for (std::size_t i = 0; i < all.size(); ++i) {
    seen.push_back(all[i].class_index);
    if (i > 0) EXPECT_GE(all[i - 1].probability, all[i].probability);
  }
  std::sort(seen.begin(), seen.end());
  for (int i = 0; i < cfg.classes; ++i) EXPECT_EQ(seen[i], i);
  EXPECT_THROW(predict_topk(model, w, cfg.classes + 1), std::invalid_argument);
  EXPECT_THROW(predict_topk(model, w, 0), std::invalid_argument);
}

TEST(LstmPredict, OutputBiasFavoursClassSeven) {
  auto cfg = tiny_config();
  cfg.classes = 10;
  auto model = init_model<float>(cfg, 71);
  model.params.out_w.setZero();
  model.params.out_b.setZero();
  model.params.out_b(0, 7) = 5.0f;
  auto w = random_encoded(cfg, 1, 72)[0];
  const auto top = predict_topk(model, w, 3);
  EXPECT_EQ(top[0].class_index, 7);
  // Remaining classes tie exactly; ties resolve toward lower index.
  EXPECT_EQ(top[1].class_index, 0);
  EXPECT_EQ(top[2].class_index, 1);

  const auto catalog = testing::toy_catalog(10);
  const auto ids = predict_topk(model, w, 1, catalog);
  EXPECT_EQ(ids[0].movie_id, 8);
}

TEST(LstmFit, InitialLossNearUniformOverThousandClasses) {
  LstmConfig cfg;  // full-size network
  auto model = init_model<float>(cfg, 81);
  const auto catalog = testing::toy_catalog(1000);
  const auto vocab = build_vocab(catalog);
  cfg.vocab_size = static_cast<int>(vocab.size());
  model = init_model<float>(cfg, 81);
  const FeatureTable table(catalog, vocab);
  const auto windows = testing::random_windows(64, 1000, cfg.seq_len, 82);
  const auto ev = evaluate_windows(model, std::span<const ClassWindow>(windows), table, 64);
  EXPECT_NEAR(ev.loss, std::log(1000.0), 0.3);
}

TEST(LstmFit, LearnsCopyLastTask) {
  const auto catalog = testing::toy_catalog(20);
  const auto vocab = build_vocab(catalog);
  auto cfg = learnable_config();
  cfg.vocab_size = static_cast<int>(vocab.size());
  const FeatureTable table(catalog, vocab);
  const auto train = testing::copy_last_windows(1500, 20, cfg.seq_len, 1);
  const auto val = testing::copy_last_windows(300, 20, cfg.seq_len, 2);
  auto model = init_model<float>(cfg, 7);
  const auto report = fit(model, std::span<const ClassWindow>(train),
                          std::span<const ClassWindow>(val), table);
  ASSERT_EQ(report.epochs.size(), 10u);
  EXPECT_GT(report.epochs.back().val_acc, 0.9);
  EXPECT_LT(report.epochs.back().train_loss, report.epochs.front().train_loss);
  for (const auto& e : report.epochs) {
    EXPECT_GE(e.train_loss, 0.0);
    EXPECT_GE(e.val_acc, 0.0);
    EXPECT_LE(e.val_top5, 1.0);
    EXPECT_LE(e.val_acc, e.val_top5);
  }
}

TEST(LstmFit, SeedDeterminismAndResume) {
  const auto catalog = testing::toy_catalog(12);
  const auto vocab = build_vocab(catalog);
  auto cfg = tiny_config();
  cfg.classes = 12;
  cfg.title_len = kTitleLen;
  cfg.vocab_size = static_cast<int>(vocab.size());
  cfg.epochs = 4;
  const FeatureTable table(catalog, vocab);
  const auto train = testing::random_windows(60, 12, cfg.seq_len, 3);
  const auto val = testing::random_windows(20, 12, cfg.seq_len, 4);
  std::span<const ClassWindow> tr(train), va(val);

  auto a = init_model<float>(cfg, 5);
  auto b = init_model<float>(cfg, 5);
  const auto ra = fit(a, tr, va, table);
  const auto rb = fit(b, tr, va, table);
  EXPECT_EQ(ra, rb);

  // Stop after two epochs, checkpoint, reload, finish.
  auto c = init_model<float>(cfg, 5);
  c.config.epochs = 2;
  const auto first = fit(c, tr, va, table);
  std::stringstream buf;
  write_checkpoint(buf, c);
  auto d = read_checkpoint<float>(buf);
  EXPECT_EQ(d.epochs_completed, 2);
  d.config.epochs = 4;
  const auto rest = fit(d, tr, va, table);
  ASSERT_EQ(rest.epochs.size(), 2u);
  EXPECT_EQ(rest.epochs[0].epoch, 3);
  EXPECT_EQ(first.epochs[0], ra.epochs[0]);
  EXPECT_EQ(first.epochs[1], ra.epochs[1]);
  EXPECT_EQ(rest.epochs[0], ra.epochs[2]);
  EXPECT_EQ(rest.epochs[1], ra.epochs[3]);
  EXPECT_TRUE(d.params.out_w == a.params.out_w);
}

TEST(LstmCheckpoint, RoundTripAndRejectsGarbage) {
  auto model = init_model<float>(tiny_config(), 91);
  std::stringstream buf;
  write_checkpoint(buf, model);
  auto back = read_checkpoint<float>(buf);
  EXPECT_TRUE(back.params.w1 == model.params.w1);
  EXPECT_TRUE(back.params.word_emb == model.params.word_emb);
  EXPECT_EQ(back.config.seed, 91u);

  std::stringstream wrong_width;
  write_checkpoint(wrong_width, model);
  EXPECT_THROW(read_checkpoint<double>(wrong_width), DataError);
  std::stringstream junk("not a checkpoint at all");
  EXPECT_THROW(read_checkpoint<float>(junk), DataError);
}

TEST(LstmReport, CsvLayout) {
  TrainReport r;
  r.epochs.push_back({1, 5.5, 5.6, 0.02, 0.03, 0.1, 0.12});
  const auto csv = r.to_csv("seed=7");
  EXPECT_EQ(csv,
            "# seed=7\n"
            "epoch,train_loss,val_loss,train_acc,val_acc,train_top5_acc,val_top5_acc\n"
            "1,5.5,5.6,0.02,0.03,0.1,0.12\n");
}

}  // namespace
}  // namespace dualrec
