#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <deque>
#include <filesystem>
#include <limits>
#include <random>

#include "gluenet/checkpoint.hpp"
#include "gluenet/train.hpp"
#include "helpers.hpp"

using namespace gluenet;
using namespace testing_helpers;

namespace {

GlueNetConfig small_config(std::size_t l = 4, std::size_t c = 6, std::size_t l_out = 4,
                           std::size_t c_out = 6) {
  auto g = GlueNetConfig::make(l, l_out, c, c_out, 1);
  g.token_hidden_ratio = 2.0;
  g.dim_hidden_ratio = 2.0;
  return g;
}

ParallelCorpus rotation_corpus(std::size_t l, std::size_t c, std::size_t count, std::uint64_t seed) {
  SyntheticEncoderSpec spec;
  spec.seed = seed;
  spec.l_in = spec.l_out = l;
  spec.c_in = spec.c_out = c;
  return gen_synthetic_pair(spec, count).corpus;
}

TrainConfig fast_config(std::uint64_t seed = 3) {
  TrainConfig t;
  t.lr = 1e-3;
  t.batch_size = 8;
  t.seed = seed;
  return t;
}

bool same_params(const ParameterStore<float>& a, const ParameterStore<float>& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a) {
    if (!b.contains(name)) return false;
    const auto& u = b.at(name);
    if (t.shape() != u.shape()) return false;
    if (std::memcmp(t.data().data(), u.data().data(), t.numel() * sizeof(float)) != 0) return false;
  }
  return true;
}

bool same_trainers(const Trainer<float>& x, const Trainer<float>& y) {
  return same_params(x.encoder().params(), y.encoder().params()) &&
         same_params(x.decoder().params(), y.decoder().params()) &&
         same_params(x.discriminator().params(), y.discriminator().params());
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("gluenet_test_train_" + name)).string();
}

}  // namespace

TEST(Train, ZeroStepsLeavesInitialization) {
  auto g = small_config();
  auto tc = fast_config(11);
  Trainer<float> t(g, tc, rotation_corpus(4, 6, 32, 1));
  std::size_t rows = 0;
  t.run_until(0, [&](auto, const auto&) { ++rows; });
  EXPECT_EQ(rows, 0u);
  EXPECT_EQ(t.step_count(), 0u);
  std::mt19937_64 rng(11);
  GlueNet<float> enc(g, rng), dec(g.mirror(), rng);
  Discriminator<float> d(g, rng);
  EXPECT_TRUE(same_params(t.encoder().params(), enc.params()));
  EXPECT_TRUE(same_params(t.decoder().params(), dec.params()));
  EXPECT_TRUE(same_params(t.discriminator().params(), d.params()));
}

TEST(Train, DeterministicAcrossReruns) {
  auto g = small_config();
  auto tc = fast_config();
  tc.loss_weights = LossWeights::with_adversarial();
  auto corpus = rotation_corpus(4, 6, 40, 2);
  Trainer<float> a(g, tc, corpus), b(g, tc, corpus);
  std::vector<double> la, lb;
  a.run_until(12, [&](auto, const LossReport& r) { la.push_back(r.total); });
  b.run_until(12, [&](auto, const LossReport& r) { lb.push_back(r.total); });
  EXPECT_EQ(la, lb);
  EXPECT_TRUE(same_trainers(a, b));

  auto other = tc;
  other.seed = tc.seed + 1;
  Trainer<float> c(g, other, corpus);
  c.run_until(12);
  EXPECT_FALSE(same_params(a.encoder().params(), c.encoder().params()));
}

TEST(Train, ReportRowsSatisfyTotalIdentity) {
  auto g = small_config();
  auto tc = fast_config();
  tc.loss_weights = {1.0, 0.5, 0.25};
  Trainer<float> t(g, tc, rotation_corpus(4, 6, 40, 3));
  t.run_until(5, [&](auto step, const LossReport& r) {
    EXPECT_GT(step, 0u);
    EXPECT_NEAR(r.total, total_objective(tc.loss_weights, r), 1e-5 * std::max(1.0, r.total));
    EXPECT_GT(r.adv_d, 0.0);
    EXPECT_GT(r.adv_g, 0.0);
  });
}

TEST(Train, AdversarialOffLeavesDiscriminatorUntouched) {
  auto g = small_config();
  Trainer<float> t(g, fast_config(), rotation_corpus(4, 6, 40, 4));
  const auto before = t.discriminator().params().clone();
  t.run_until(5, [](auto, const LossReport& r) {
    EXPECT_EQ(r.adv_d, 0.0);
    EXPECT_EQ(r.adv_g, 0.0);
  });
  EXPECT_TRUE(same_params(before, t.discriminator().params()));
  EXPECT_EQ(t.discriminator_state().t, 0u);
}

TEST(Train, DiscriminatorStepLeavesGeneratorGradientsZero) {
  auto g = small_config();
  std::mt19937_64 rng(5);
  GlueNet<float> enc(g, rng), dec(g.mirror(), rng);
  Discriminator<float> d(g, rng);
  auto src = random_tensor<float>(Shape{3, 4, 6}, rng);
  auto tgt = random_tensor<float>(Shape{3, 4, 6}, rng);
  Tape<float> tape;
  // Record the encoder on the same tape to prove the loss itself severs it.
  auto fake = enc.forward(tape, src);
  auto rec = dec.forward(tape, fake);
  auto loss_d = discriminator_loss(tape, d, tgt, fake);
  tape.backward(loss_d);
  for (const auto* store : {&enc.params(), &dec.params()})
    for (const auto& [name, t] : *store)
      for (float v : t.grad()) ASSERT_EQ(v, 0.0f) << name;
  bool any = false;
  for (const auto& [_, t] : d.params())
    for (float v : t.grad()) any = any || v != 0.0f;
  EXPECT_TRUE(any);
  (void)rec;
}

TEST(Train, UniformReweightReproducesPlainTraining) {
  auto g = small_config();
  auto corpus = rotation_corpus(4, 6, 40, 6);
  auto plain_cfg = fast_config();
  auto weighted_cfg = plain_cfg;
  weighted_cfg.reweight = true;
  Trainer<float> plain(g, plain_cfg, corpus), weighted(g, weighted_cfg, corpus);
  weighted.set_token_weights(std::vector<float>(4, 2.5f));
  std::vector<double> a, b;
  plain.run_until(10, [&](auto, const LossReport& r) { a.push_back(r.mse); });
  weighted.run_until(10, [&](auto, const LossReport& r) { b.push_back(r.mse); });
  EXPECT_EQ(a, b);
  EXPECT_TRUE(same_trainers(plain, weighted));
}

TEST(Train, ReweightWithoutWeightsIsConfigError) {
  auto tc = fast_config();
  tc.reweight = true;
  Trainer<float> t(small_config(), tc, rotation_corpus(4, 6, 16, 7));
  expect_error(ErrorKind::kConfig, [&] { t.step(); });
  expect_error(ErrorKind::kDegenerateWeights, [&] { t.set_token_weights(std::vector<float>(4, 0.0f)); });
  expect_error(ErrorKind::kDimension, [&] { t.set_token_weights(std::vector<float>(3, 1.0f)); });
}

TEST(Train, NonFiniteLossAbortsWithStepNumber) {
  auto corpus = rotation_corpus(4, 6, 8, 8);
  for (auto& v : corpus.source.records) v = std::numeric_limits<float>::quiet_NaN();
  auto tc = fast_config();
  tc.batch_size = 8;
  Trainer<float> t(small_config(), tc, corpus);
  try {
    t.step();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumeric);
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
  }
}

TEST(Train, ShapeMismatchRejected) {
  expect_error(ErrorKind::kDimension,
               [] { Trainer<float>(small_config(4, 5), fast_config(), rotation_corpus(4, 6, 8, 1)); });
}

TEST(Train, IdentityTaskBeatsShuffledBaselineAfterHundredSteps) {
  auto corpus = rotation_corpus(4, 6, 256, 9);
  corpus.target = corpus.source;
  Trainer<float> t(small_config(), fast_config(), corpus);
  t.run_until(100);
  // Baseline: the same source paired with a shuffled copy of itself.
  EmbeddingStore shuffled = corpus.source;
  std::mt19937_64 rng(10);
  std::vector<std::size_t> order(shuffled.count);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  shuffled.records.clear();
  for (auto i : order) {
    auto r = corpus.source.record(i);
    shuffled.records.insert(shuffled.records.end(), r.begin(), r.end());
  }
  const double baseline = aligned_mse(t.encoder(), corpus.source, shuffled);
  const double aligned = aligned_mse(t.encoder(), corpus.source, corpus.target);
  EXPECT_LT(aligned, baseline);
  EXPECT_LT(aligned, 0.5 * baseline);
}

TEST(Train, MovingAverageOfLossFallsTenfoldOnRotationTask) {
  auto g = GlueNetConfig::make(8, 8, 16, 16, 1);
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.batch_size = 32;
  tc.seed = 1;
  Trainer<float> t(g, tc, rotation_corpus(8, 16, 4096, 7));
  std::deque<double> window;
  double sum = 0, at100 = 0, at2000 = 0;
  t.run_until(2000, [&](std::uint64_t step, const LossReport& r) {
    window.push_back(r.total);
    sum += r.total;
    if (window.size() > 100) {
      sum -= window.front();
      window.pop_front();
    }
    if (step == 100) at100 = sum / 100;
    if (step == 2000) at2000 = sum / 100;
  });
  EXPECT_GT(at100, 0.0);
  EXPECT_LT(at2000, 0.1 * at100) << "avg@100=" << at100 << " avg@2000=" << at2000;
}

TEST(Translate, MatchesPerRecordLoopBitExactly) {
  auto g = small_config(5, 3, 4, 7);
  std::mt19937_64 rng(12);
  GlueNet<float> enc(g, rng);
  EmbeddingStore s{70, 5, 3, std::vector<float>(70 * 15), std::vector<std::uint64_t>{}};
  std::normal_distribution<float> n;
  for (auto& v : s.records) v = n(rng);
  for (std::uint64_t i = 0; i < 70; ++i) s.ids->push_back(1000 + i);
  auto out = translate(enc, s);
  EXPECT_EQ(out.count, 70u);
  EXPECT_EQ(out.tokens, 4u);
  EXPECT_EQ(out.dim, 7u);
  EXPECT_EQ(out.ids, s.ids);
  for (std::size_t r = 0; r < s.count; ++r) {
    auto rec = s.record(r);
    auto y = enc.forward(Tensor<float>(Shape{5, 3}, {rec.begin(), rec.end()}));
    auto got = out.record(r);
    ASSERT_EQ(std::memcmp(got.data(), y.data().data(), got.size() * sizeof(float)), 0) << r;
  }
}

TEST(Translate, ZeroBodyAndTailGivesHead) {
  auto g = small_config();
  std::mt19937_64 rng(13);
  GlueNet<float> enc(g, rng);
  zero_weights(enc.params(), "body.");
  zero_weights(enc.params(), "tail.");
  EmbeddingStore s{3, 4, 6, std::vector<float>(72), std::nullopt};
  std::normal_distribution<float> n;
  for (auto& v : s.records) v = n(rng);
  auto out = translate(enc, s);
  auto tape = Tape<float>::disabled();
  auto head = mixer_block(tape, enc.params(), enc.blocks().front(), s.all<float>());
  EXPECT_EQ(out.records, head.values());
}

TEST(Translate, ShapeMismatchAndEmptyStore) {
  std::mt19937_64 rng(14);
  GlueNet<float> enc(small_config(), rng);
  EmbeddingStore wrong{1, 4, 5, std::vector<float>(20), std::nullopt};
  expect_error(ErrorKind::kDimension, [&] { translate(enc, wrong); });
  EmbeddingStore empty{0, 4, 6, {}, std::nullopt};
  EXPECT_EQ(translate(enc, empty).count, 0u);
}

TEST(LoopStability, ExactInverseGivesZero) {
  auto g = small_config();
  std::mt19937_64 rng(15);
  GlueNet<float> enc(g, rng), dec(g.mirror(), rng);
  zero_weights(enc.params());
  zero_weights(dec.params());
  auto corpus = rotation_corpus(4, 6, 10, 16);
  auto r = loop_stability_eval(enc, dec, corpus.source);
  EXPECT_EQ(r.e1, 0.0);
  EXPECT_EQ(r.e2, 0.0);
}

TEST(LoopStability, UntrainedModelsReportFiniteErrors) {
  auto g = small_config(4, 6, 3, 5);
  std::mt19937_64 rng(17);
  GlueNet<float> enc(g, rng), dec(g.mirror(), rng);
  SyntheticEncoderSpec spec;
  spec.l_in = 4;
  spec.c_in = 6;
  spec.l_out = 3;
  spec.c_out = 5;
  spec.transform = SyntheticTransform::kRandomTwoLayerNet;
  auto corpus = gen_synthetic_pair(spec, 20).corpus;
  auto r = loop_stability_eval(enc, dec, corpus.source);
  EXPECT_TRUE(std::isfinite(r.e1));
  EXPECT_TRUE(std::isfinite(r.e2));
  EXPECT_GT(r.e1, 0.0);
}

TEST(LoopStability, MatchesDirectComputation) {
  auto g = small_config();
  std::mt19937_64 rng(18);
  GlueNet<float> enc(g, rng), dec(g.mirror(), rng);
  auto corpus = rotation_corpus(4, 6, 5, 19);
  auto r = loop_stability_eval(enc, dec, corpus.source);
  const auto x = corpus.source.all<float>();
  const auto x1 = dec.forward(enc.forward(x));
  const auto x2 = dec.forward(enc.forward(x1));
  double s1 = 0, s2 = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    s1 += (double(x1[i]) - x[i]) * (double(x1[i]) - x[i]);
    s2 += (double(x2[i]) - x1[i]) * (double(x2[i]) - x1[i]);
  }
  EXPECT_NEAR(r.e1, s1 / x.numel(), 1e-12);
  EXPECT_NEAR(r.e2, s2 / x.numel(), 1e-12);
}

TEST(LoopStability, MismatchedDecoderRejected) {
  auto g = small_config();
  std::mt19937_64 rng(20);
  GlueNet<float> enc(g, rng), dec(small_config(4, 6, 4, 5).mirror(), rng);
  auto corpus = rotation_corpus(4, 6, 5, 21);
  expect_error(ErrorKind::kDimension, [&] { loop_stability_eval(enc, dec, corpus.source); });
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto tc = fast_config();
  tc.loss_weights = LossWeights::with_adversarial();
  tc.reweight = true;
  Trainer<float> t(small_config(), tc, rotation_corpus(4, 6, 30, 22));
  t.set_token_weights({1.0f, 2.0f, 0.5f, 0.0f});
  t.run_until(7);
  const auto bytes = encode_checkpoint(capture(t));
  const auto back = decode_checkpoint(bytes, t.gluenet_config());
  EXPECT_EQ(encode_checkpoint(back), bytes);
  EXPECT_EQ(back.step, 7u);
  EXPECT_EQ(back.gen_opt.t, 7u);
  EXPECT_EQ(back.disc_opt.t, 7u);
  EXPECT_EQ(back.gcfg, t.gluenet_config());
  EXPECT_EQ(back.tcfg.to_text(), tc.to_text());
  ASSERT_TRUE(back.token_weights.has_value());
  EXPECT_EQ(*back.token_weights, (std::vector<float>{1.0f, 2.0f, 0.5f, 0.0f}));
  EXPECT_EQ(bytes.substr(0, 4), "GGCK");
}

TEST(Checkpoint, FreshInitReloadGivesIdenticalForward) {
  Trainer<float> t(small_config(), fast_config(), rotation_corpus(4, 6, 10, 23));
  const auto path = temp_path("fresh.ggck");
  save_checkpoint(path, capture(t));
  const auto c = load_checkpoint(path, t.gluenet_config());
  GlueNet<float> enc(c.gcfg, c.encoder.clone());
  const auto x = t.corpus().source.all<float>();
  EXPECT_EQ(enc.forward(x).values(), t.encoder().forward(x).values());
  std::filesystem::remove(path);
}

TEST(Checkpoint, AlteredConfigIsDigestError) {
  Trainer<float> t(small_config(), fast_config(), rotation_corpus(4, 6, 10, 24));
  const auto bytes = encode_checkpoint(capture(t));
  auto altered = small_config();
  altered.num_rms = 2;
  expect_error(ErrorKind::kDigest, [&] { decode_checkpoint(bytes, altered); });
  auto tampered = bytes;
  tampered[10] ^= 0x01;
  expect_error(ErrorKind::kDigest, [&] { decode_checkpoint(tampered); });
}

TEST(Checkpoint, MalformedFilesAreDiagnosed) {
  Trainer<float> t(small_config(), fast_config(), rotation_corpus(4, 6, 10, 25));
  const auto bytes = encode_checkpoint(capture(t));
  auto bad = bytes;
  bad[1] = 'X';
  expect_error(ErrorKind::kBadMagic, [&] { decode_checkpoint(bad); });
  expect_error(ErrorKind::kTruncated, [&] { decode_checkpoint(bytes.substr(0, bytes.size() - 3)); });
  expect_error(ErrorKind::kTruncated, [&] { decode_checkpoint(bytes + "zz"); });
}

TEST(Checkpoint, ResumeEqualsUninterruptedTraining) {
  auto corpus = rotation_corpus(4, 6, 27, 26);
  auto tc = fast_config();
  tc.loss_weights = LossWeights::with_adversarial();
  Trainer<float> straight(small_config(), tc, corpus);
  straight.run_until(20);

  Trainer<float> first(small_config(), tc, corpus);
  first.run_until(9);
  const auto path = temp_path("resume.ggck");
  save_checkpoint(path, capture(first));

  auto other = tc;
  other.seed = 999;
  Trainer<float> resumed(small_config(), other, corpus);
  restore(resumed, load_checkpoint(path, small_config()));
  resumed.run_until(20);
  EXPECT_EQ(resumed.step_count(), 20u);
  EXPECT_TRUE(same_trainers(straight, resumed));
  EXPECT_EQ(straight.generator_state().m, resumed.generator_state().m);
  EXPECT_EQ(straight.generator_state().v, resumed.generator_state().v);
  EXPECT_EQ(straight.discriminator_state().v, resumed.discriminator_state().v);
  std::filesystem::remove(path);
}

TEST(TrainConfigText, RoundTripAndValidation) {
  auto tc = fast_config(42);
  tc.loss_weights = {1, 0.05, 1};
  tc.reweight = true;
  tc.weights_from = "w.gge";
  tc.checkpoint_every = 50;
  auto back = TrainConfig::from_key_values(parse_key_values(tc.to_text()));
  EXPECT_EQ(back.to_text(), tc.to_text());
  expect_error(ErrorKind::kConfig, [] { TrainConfig::from_key_values(parse_key_values("lr = 0\n")); });
  expect_error(ErrorKind::kConfig, [] { TrainConfig::from_key_values(parse_key_values("lambda_mse = 0\nlambda_rec = 0\n")); });
  TrainConfig d;
  EXPECT_EQ(d.lr, 1e-4);
  EXPECT_EQ(d.beta1, 0.9);
  EXPECT_EQ(d.beta2, 0.999);
  EXPECT_EQ(d.eps, 1e-8);
  EXPECT_EQ(d.weight_decay, 0.01);
}
