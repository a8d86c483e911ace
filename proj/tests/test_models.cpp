#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "tsadv/data.hpp"
#include "tsadv/model.hpp"

using namespace tsadv;

namespace {

Dataset separable_toy() {
  // two point clouds on opposite sides of a hyperplane
  Dataset ds;
  ds.num_classes = 2;
  ds.length = 2;
  Rng rng(3);
  for (int i = 0; i < 40; ++i) {
    Series s;
    int label = i % 2;
    double cx = label == 0 ? -2.0 : 2.0;
    s.values = {cx + rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
    s.label = label;
    ds.train.push_back(s);
  }
  ds.test = ds.train;
  return ds;
}

bool same_params(const Model& a, const Model& b) {
  if (a.params.size() != b.params.size()) return false;
  for (std::size_t i = 0; i < a.params.size(); ++i)
    if (a.params[i].name != b.params[i].name ||
        a.params[i].value.data != b.params[i].value.data)
      return false;
  return true;
}

}  // namespace

TEST(Build, LogisticParameterCount) {
  Model m = build_model(Architecture::kLogistic, 4, 2, 7);
  EXPECT_EQ(m.parameter_count(), 4u * 2u + 2u);
}

TEST(Build, MlpParameterCount) {
  Model m = build_model(Architecture::kMlp, 16, 2, 7, 32);
  EXPECT_EQ(m.parameter_count(), 16u * 32u + 32u + 32u * 2u + 2u);
}

TEST(Build, SameSeedBitIdentical) {
  for (auto arch : {Architecture::kLogistic, Architecture::kMlp, Architecture::kCnn1d}) {
    Model a = build_model(arch, 16, 3, 42);
    Model b = build_model(arch, 16, 3, 42);
    EXPECT_TRUE(same_params(a, b));
    Model c = build_model(arch, 16, 3, 43);
    EXPECT_FALSE(same_params(a, c));
  }
}

TEST(Build, Cnn1dRequiresMinimumLength) {
  EXPECT_THROW(build_model(Architecture::kCnn1d, 7, 2, 1), ConfigError);
  EXPECT_NO_THROW(build_model(Architecture::kCnn1d, 8, 2, 1));
}

TEST(Predict, ZeroWeightsGiveZeroLogits) {
  Model m = build_model(Architecture::kLogistic, 3, 2, 1);
  for (auto& p : m.params)
    for (auto& v : p.value.data) v = 0.0;
  auto z = m.predict(std::vector<double>{0.3, -0.7, 2.0});
  EXPECT_EQ(z, (std::vector<double>{0, 0}));
  EXPECT_EQ(m.predict_class(std::vector<double>{0.3, -0.7, 2.0}), 0);  // tie-break low
}

TEST(Predict, IdentityRowsLogits) {
  Model m = build_model(Architecture::kLogistic, 2, 2, 1);
  m.params[0].value = NdArray::matrix(2, 2, {1, 0, 0, 1});
  m.params[1].value = NdArray::zeros({2});
  auto z = m.predict(std::vector<double>{2, 1});
  EXPECT_EQ(z, (std::vector<double>{2, 1}));
  EXPECT_EQ(m.predict_class(std::vector<double>{2, 1}), 0);
}

TEST(Predict, LengthMismatchThrows) {
  Model m = build_model(Architecture::kLogistic, 4, 2, 1);
  EXPECT_THROW(m.predict(std::vector<double>{1, 2}), ShapeError);
}

TEST(Predict, PureFunction) {
  Model m = build_model(Architecture::kCnn1d, 16, 2, 5);
  std::vector<double> x(16, 0.25);
  auto a = m.predict(x);
  auto b = m.predict(x);
  EXPECT_EQ(a, b);
}

TEST(Train, ZeroLearningRateLeavesParamsUnchanged) {
  Dataset ds = separable_toy();
  Model m = build_model(Architecture::kLogistic, 2, 2, 9);
  Model before = m;
  TrainConfig cfg;
  cfg.optimizer = Optimizer::kSgd;
  cfg.learning_rate = 0.0;
  cfg.epochs = 1;
  TrainResult r = train(std::move(m), ds, cfg);
  EXPECT_TRUE(same_params(before, r.model));
  EXPECT_EQ(r.loss_curve.size(), 1u);
}

TEST(Train, LinearlySeparableConverges) {
  Dataset ds = separable_toy();
  Model m = build_model(Architecture::kLogistic, 2, 2, 9);
  TrainConfig cfg;
  cfg.optimizer = Optimizer::kSgd;
  cfg.learning_rate = 0.5;
  cfg.epochs = 200;
  cfg.batch_size = 64;
  TrainResult r = train(std::move(m), ds, cfg);
  EXPECT_DOUBLE_EQ(r.train_accuracy, 1.0);
  EXPECT_LE(r.loss_curve.back(), r.loss_curve.front());
}

TEST(Train, FullBatchSgdLossNonIncreasingOnConvexProblem) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Dataset ds = separable_toy();
    Model m = build_model(Architecture::kLogistic, 2, 2, seed);
    TrainConfig cfg;
    cfg.optimizer = Optimizer::kSgd;
    cfg.learning_rate = 0.1;
    cfg.epochs = 50;
    cfg.batch_size = static_cast<int>(ds.train.size());
    cfg.seed = seed;
    TrainResult r = train(std::move(m), ds, cfg);
    for (std::size_t i = 1; i < r.loss_curve.size(); ++i)
      EXPECT_LE(r.loss_curve[i], r.loss_curve[i - 1] + 1e-12) << "epoch " << i;
  }
}

TEST(Train, DeterministicGivenSeed) {
  Dataset ds = separable_toy();
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 17;
  TrainResult a = train(build_model(Architecture::kMlp, 2, 2, 4, 8), ds, cfg);
  TrainResult b = train(build_model(Architecture::kMlp, 2, 2, 4, 8), ds, cfg);
  EXPECT_TRUE(same_params(a.model, b.model));
  EXPECT_EQ(a.loss_curve, b.loss_curve);
}

TEST(Train, RejectsBadInputs) {
  Dataset ds = separable_toy();
  Dataset empty;
  empty.num_classes = 2;
  TrainConfig cfg;
  EXPECT_THROW(train(build_model(Architecture::kLogistic, 2, 2, 1), empty, cfg),
               DataError);
  Dataset bad = ds;
  bad.train[0].label = 7;
  EXPECT_THROW(train(build_model(Architecture::kLogistic, 2, 2, 1), bad, cfg),
               DataError);
  TrainConfig neg;
  neg.learning_rate = -0.1;
  EXPECT_THROW(train(build_model(Architecture::kLogistic, 2, 2, 1), ds, neg),
               ConfigError);
}

// Gradient of the batch cross-entropy loss w.r.t. every parameter
// matches central finite differences on a 5-sample batch.
TEST(Train, ParameterGradientsMatchFiniteDifferences) {
  for (auto arch : {Architecture::kLogistic, Architecture::kMlp, Architecture::kCnn1d}) {
    const std::size_t d = 12;
    Model m = build_model(arch, d, 2, 21, 8);
    Rng rng(33);
    std::vector<Series> batch;
    for (int i = 0; i < 5; ++i) {
      Series s;
      for (std::size_t t = 0; t < d; ++t) s.values.push_back(rng.uniform(-2, 2));
      s.label = i % 2;
      batch.push_back(s);
    }
    for (std::size_t p = 0; p < m.params.size(); ++p) {
      auto f = [&, p](Tape& t, Tape::NodeId in) {
        std::vector<Tape::NodeId> theta;
        for (std::size_t q = 0; q < m.params.size(); ++q)
          theta.push_back(q == p ? in : t.leaf(m.params[q].value));
        Tape::NodeId acc = Tape::kNone;
        for (const auto& s : batch) {
          auto x = t.leaf(NdArray::vec(s.values));
          auto loss = t.softmax_cross_entropy(m.forward(t, x, theta), s.label);
          acc = (acc == Tape::kNone) ? loss : t.add(acc, loss);
        }
        return t.mul_const(acc, 1.0 / 5.0);
      };
      double err = grad_check(f, m.params[p].value, 1e-5);
      EXPECT_LT(err, 1e-4) << architecture_name(arch) << " param " << m.params[p].name;
    }
  }
}

TEST(Train, MlpReachesHeldOutAccuracyOnSynthetic) {
  SyntheticSpec spec;
  spec.n_per_class = 200;
  spec.length = 64;
  spec.bump_width = 8;
  spec.noise_std = 0.1;
  spec.seed = 1;
  Dataset ds = gen_synthetic(spec);
  Model m = build_model(Architecture::kMlp, 64, 2, 1, 32);
  TrainConfig cfg;
  cfg.optimizer = Optimizer::kAdam;
  cfg.learning_rate = 0.01;
  cfg.epochs = 40;
  cfg.batch_size = 32;
  cfg.seed = 1;
  TrainResult r = train(std::move(m), ds, cfg);
  EXPECT_GE(r.test_accuracy, 0.95);
}

TEST(Serialization, RoundTripReproducesLogitsBitwise) {
  namespace fs = std::filesystem;
  for (auto arch : {Architecture::kLogistic, Architecture::kMlp, Architecture::kCnn1d}) {
    Model m = build_model(arch, 16, 3, 77, 8);
    fs::path path = fs::temp_directory_path() /
                    ("tsadv_model_test_" + std::string(architecture_name(arch)) + ".model");
    save_model(m, path.string());
    Model loaded = load_model(path.string());
    Rng rng(8);
    for (int rep = 0; rep < 5; ++rep) {
      std::vector<double> x;
      for (int i = 0; i < 16; ++i) x.push_back(rng.uniform(-3, 3));
      EXPECT_EQ(m.predict(x), loaded.predict(x));
    }
    fs::remove(path);
  }
}

TEST(Serialization, SaveIsByteDeterministic) {
  namespace fs = std::filesystem;
  Model m = build_model(Architecture::kMlp, 8, 2, 5, 4);
  fs::path p1 = fs::temp_directory_path() / "tsadv_m1.model";
  fs::path p2 = fs::temp_directory_path() / "tsadv_m2.model";
  save_model(m, p1.string());
  save_model(m, p2.string());
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  EXPECT_EQ(s1, s2);
  fs::remove(p1);
  fs::remove(p2);
}

TEST(Serialization, RejectsCorruptFiles) {
  namespace fs = std::filesystem;
  fs::path p = fs::temp_directory_path() / "tsadv_bad.model";
  std::ofstream(p) << "not a model";
  EXPECT_THROW(load_model(p.string()), DataError);
  EXPECT_THROW(load_model("/nonexistent/path.model"), DataError);
  fs::remove(p);
}
