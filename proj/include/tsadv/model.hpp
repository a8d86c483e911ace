#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tsadv/data.hpp"
#include "tsadv/error.hpp"
#include "tsadv/ndarray.hpp"
#include "tsadv/rng.hpp"
#include "tsadv/tape.hpp"

namespace tsadv {

enum class Architecture { kLogistic, kMlp, kCnn1d };

inline const char* architecture_name(Architecture a) {
  switch (a) {
    case Architecture::kLogistic: return "logistic";
    case Architecture::kMlp: return "mlp";
    case Architecture::kCnn1d: return "cnn1d";
  }
  return "?";
}

inline Architecture parse_architecture(const std::string& s) {
  if (s == "logistic") return Architecture::kLogistic;
  if (s == "mlp") return Architecture::kMlp;
  if (s == "cnn1d") return Architecture::kCnn1d;
  throw ConfigError("unknown architecture: " + s);
}

struct Param {
  std::string name;
  NdArray value;
};

/// Desk-scale victim classifiers. The 1-D CNN uses two valid-mode conv
/// layers (8 channels, kernels 5 and 3), relu, global average pooling
/// and a linear readout.
class Model {
 public:
  static constexpr std::size_t kConvChannels1 = 8;
  static constexpr std::size_t kConvKernel1 = 5;
  static constexpr std::size_t kConvChannels2 = 8;
  static constexpr std::size_t kConvKernel2 = 3;

  Architecture arch = Architecture::kLogistic;
  std::size_t input_length = 0;
  std::size_t num_classes = 2;
  std::size_t hidden = 32;  // mlp only
  std::vector<Param> params;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value.numel();
    return n;
  }

  const Param& param(const std::string& name) const {
    for (const auto& p : params)
      if (p.name == name) return p;
    throw ConfigError("model has no parameter named " + name);
  }

  /// Builds the logits subgraph for one input node. `theta` must align
  /// with `params` (see make_leaves).
  Tape::NodeId forward(Tape& t, Tape::NodeId x,
                       const std::vector<Tape::NodeId>& theta) const {
    if (theta.size() != params.size())
      throw ConfigError("forward: theta/params arity mismatch");
    if (t.value(x).numel() != input_length)
      throw ShapeError("forward: input length " + std::to_string(t.value(x).numel()) +
                       " does not match model input length " +
                       std::to_string(input_length));
    switch (arch) {
      case Architecture::kLogistic:
        return t.add(t.matmul(theta[0], x), theta[1]);
      case Architecture::kMlp: {
        auto h = t.relu(t.add(t.matmul(theta[0], x), theta[1]));
        return t.add(t.matmul(theta[2], h), theta[3]);
      }
      case Architecture::kCnn1d: {
        const std::size_t c1 = kConvChannels1, c2 = kConvChannels2;
        std::size_t idx = 0;
        std::vector<Tape::NodeId> w1(c1), b1(c1);
        for (std::size_t oc = 0; oc < c1; ++oc) w1[oc] = theta[idx++];
        for (std::size_t oc = 0; oc < c1; ++oc) b1[oc] = theta[idx++];
        std::vector<Tape::NodeId> w2(c2 * c1), b2(c2);
        for (std::size_t i = 0; i < c2 * c1; ++i) w2[i] = theta[idx++];
        for (std::size_t oc = 0; oc < c2; ++oc) b2[oc] = theta[idx++];
        Tape::NodeId fc_w = theta[idx++];
        Tape::NodeId fc_b = theta[idx++];

        std::vector<Tape::NodeId> h1(c1);
        for (std::size_t oc = 0; oc < c1; ++oc)
          h1[oc] = t.relu(t.add(t.conv1d(x, w1[oc]), b1[oc]));
        std::vector<Tape::NodeId> pooled(c2);
        for (std::size_t oc = 0; oc < c2; ++oc) {
          Tape::NodeId acc = t.conv1d(h1[0], w2[oc * c1]);
          for (std::size_t ic = 1; ic < c1; ++ic)
            acc = t.add(acc, t.conv1d(h1[ic], w2[oc * c1 + ic]));
          pooled[oc] = t.mean(t.relu(t.add(acc, b2[oc])));
        }
        Tape::NodeId gap = pooled[0];
        for (std::size_t oc = 1; oc < c2; ++oc) gap = t.concat(gap, pooled[oc]);
        return t.add(t.matmul(fc_w, gap), fc_b);
      }
    }
    throw ConfigError("forward: bad architecture");
  }

  std::vector<Tape::NodeId> make_leaves(Tape& t) const {
    std::vector<Tape::NodeId> ids;
    ids.reserve(params.size());
    for (const auto& p : params) ids.push_back(t.leaf(p.value));
    return ids;
  }

  /// Pure forward pass; returns the logit vector.
  std::vector<double> predict(std::span<const double> x) const {
    Tape t;
    t.set_recording(false);
    auto xn = t.leaf(NdArray::vec({x.begin(), x.end()}));
    auto out = forward(t, xn, make_leaves(t));
    return t.value(out).data;
  }

  /// Argmax with lowest-index tie-break.
  int predict_class(std::span<const double> x) const {
    std::vector<double> z = predict(x);
    std::size_t best = 0;
    for (std::size_t i = 1; i < z.size(); ++i)
      if (z[i] > z[best]) best = i;
    return static_cast<int>(best);
  }
};

namespace detail {

inline NdArray glorot_uniform(Rng& rng, std::vector<std::size_t> shape,
                              std::size_t fan_in, std::size_t fan_out) {
  double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  NdArray a = NdArray::zeros(std::move(shape));
  for (auto& v : a.data) v = rng.uniform(-s, s);
  return a;
}

}  // namespace detail

/// Deterministic Glorot-uniform weights, zero biases. Two builds with
/// the same seed are bit-identical.
inline Model build_model(Architecture arch, std::size_t input_length,
                         std::size_t num_classes, std::uint64_t seed,
                         std::size_t hidden = 32) {
  if (input_length < 1) throw ConfigError("build_model: input_length must be >= 1");
  if (num_classes < 2) throw ConfigError("build_model: num_classes must be >= 2");
  Model m;
  m.arch = arch;
  m.input_length = input_length;
  m.num_classes = num_classes;
  m.hidden = hidden;
  Rng rng(seed);
  const std::size_t d = input_length, k = num_classes;
  switch (arch) {
    case Architecture::kLogistic:
      m.params.push_back({"W", detail::glorot_uniform(rng, {k, d}, d, k)});
      m.params.push_back({"b", NdArray::zeros({k})});
      break;
    case Architecture::kMlp: {
      if (hidden < 1) throw ConfigError("build_model: hidden must be >= 1");
      const std::size_t h = hidden;
      m.params.push_back({"W1", detail::glorot_uniform(rng, {h, d}, d, h)});
      m.params.push_back({"b1", NdArray::zeros({h})});
      m.params.push_back({"W2", detail::glorot_uniform(rng, {k, h}, h, k)});
      m.params.push_back({"b2", NdArray::zeros({k})});
      break;
    }
    case Architecture::kCnn1d: {
      if (input_length < 8)
        throw ConfigError("build_model: cnn1d requires input_length >= 8");
      const std::size_t c1 = Model::kConvChannels1, k1 = Model::kConvKernel1;
      const std::size_t c2 = Model::kConvChannels2, k2 = Model::kConvKernel2;
      for (std::size_t oc = 0; oc < c1; ++oc)
        m.params.push_back({"conv1.w" + std::to_string(oc),
                            detail::glorot_uniform(rng, {k1}, k1, c1 * k1)});
      for (std::size_t oc = 0; oc < c1; ++oc)
        m.params.push_back({"conv1.b" + std::to_string(oc), NdArray::zeros({1})});
      for (std::size_t oc = 0; oc < c2; ++oc)
        for (std::size_t ic = 0; ic < c1; ++ic)
          m.params.push_back(
              {"conv2.w" + std::to_string(oc) + "_" + std::to_string(ic),
               detail::glorot_uniform(rng, {k2}, c1 * k2, c2 * k2)});
      for (std::size_t oc = 0; oc < c2; ++oc)
        m.params.push_back({"conv2.b" + std::to_string(oc), NdArray::zeros({1})});
      m.params.push_back({"fc.W", detail::glorot_uniform(rng, {k, c2}, c2, k)});
      m.params.push_back({"fc.b", NdArray::zeros({k})});
      break;
    }
  }
  return m;
}

enum class Optimizer { kSgd, kAdam };

inline const char* optimizer_name(Optimizer o) {
  return o == Optimizer::kSgd ? "sgd" : "adam";
}

inline Optimizer parse_optimizer(const std::string& s) {
  if (s == "sgd") return Optimizer::kSgd;
  if (s == "adam") return Optimizer::kAdam;
  throw ConfigError("unknown optimizer: " + s);
}

struct TrainConfig {
  Optimizer optimizer = Optimizer::kAdam;
  double learning_rate = 0.01;
  int epochs = 100;
  int batch_size = 32;
  std::uint64_t seed = 0;
};

struct TrainResult {
  Model model;
  std::vector<double> loss_curve;  // mean pre-step batch loss per epoch
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

inline double accuracy(const Model& m, const std::vector<Series>& samples) {
  if (samples.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& s : samples)
    if (m.predict_class(s.values) == s.label) ++hits;
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

/// Minibatch trainer (sgd or adam). Deterministic given the seed: the
/// shuffle stream and all arithmetic are fully pinned.
inline TrainResult train(Model model, const Dataset& data, const TrainConfig& cfg) {
  if (data.train.empty()) throw DataError("train: empty dataset");
  for (const auto& s : data.train)
    if (s.label < 0 || s.label >= data.num_classes)
      throw DataError("train: label " + std::to_string(s.label) + " out of range");
  if (cfg.learning_rate < 0) throw ConfigError("train: learning_rate must be >= 0");
  if (cfg.epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");

  const std::size_t n_params = model.params.size();
  std::vector<NdArray> adam_m, adam_v;
  if (cfg.optimizer == Optimizer::kAdam) {
    for (const auto& p : model.params) {
      adam_m.push_back(NdArray::zeros(p.value.shape));
      adam_v.push_back(NdArray::zeros(p.value.shape));
    }
  }
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      Tape t;
      auto theta = model.make_leaves(t);
      Tape::NodeId acc = Tape::kNone;
      for (std::size_t i = begin; i < end; ++i) {
        const Series& s = data.train[order[i]];
        auto x = t.leaf(NdArray::vec(s.values));
        auto loss = t.softmax_cross_entropy(model.forward(t, x, theta), s.label);
        acc = (acc == Tape::kNone) ? loss : t.add(acc, loss);
      }
      auto batch_loss = t.mul_const(acc, 1.0 / static_cast<double>(end - begin));
      epoch_loss += t.value(batch_loss)[0] * static_cast<double>(end - begin);
      seen += end - begin;
      t.backward(batch_loss);

      ++step;
      for (std::size_t p = 0; p < n_params; ++p) {
        NdArray g = t.grad(theta[p]);
        NdArray& w = model.params[p].value;
        if (cfg.optimizer == Optimizer::kSgd) {
          for (std::size_t i = 0; i < w.numel(); ++i) w[i] -= cfg.learning_rate * g[i];
        } else {
          NdArray& mm = adam_m[p];
          NdArray& vv = adam_v[p];
          double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
          double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
          for (std::size_t i = 0; i < w.numel(); ++i) {
            mm[i] = beta1 * mm[i] + (1.0 - beta1) * g[i];
            vv[i] = beta2 * vv[i] + (1.0 - beta2) * g[i] * g[i];
            double mhat = mm[i] / c1;
            double vhat = vv[i] / c2;
            w[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + eps);
          }
        }
        if (!w.all_finite())
          throw NumericError("train: non-finite parameter after update (" +
                             model.params[p].name + ")");
      }
    }
    result.loss_curve.push_back(epoch_loss / static_cast<double>(seen));
  }

  result.train_accuracy = accuracy(model, data.train);
  result.test_accuracy = accuracy(model, data.test);
  result.model = std::move(model);
  return result;
}

namespace detail {

inline std::uint64_t byteswap64(std::uint64_t x) {
  return __builtin_bswap64(x);
}

inline void write_u64_le(std::ostream& out, std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) v = byteswap64(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline std::uint64_t read_u64_le(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if constexpr (std::endian::native == std::endian::big) v = byteswap64(v);
  return v;
}

}  // namespace detail

inline constexpr char kModelMagic[8] = {'T', 'S', 'A', 'D', 'V', 'M', 'D', 'L'};

/// Flat binary container: 8-byte magic, u64 header length, JSON header
/// (architecture and parameter shapes), then the raw little-endian
/// 64-bit floats of every parameter in declared order.
inline void save_model(const Model& m, const std::string& path) {
  nlohmann::json header;
  header["format_version"] = 1;
  header["architecture"] = architecture_name(m.arch);
  header["input_length"] = m.input_length;
  header["num_classes"] = m.num_classes;
  header["hidden"] = m.hidden;
  nlohmann::json plist = nlohmann::json::array();
  for (const auto& p : m.params)
    plist.push_back({{"name", p.name}, {"shape", p.value.shape}});
  header["params"] = plist;
  std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open model file for writing: " + path);
  out.write(kModelMagic, sizeof(kModelMagic));
  detail::write_u64_le(out, hs.size());
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& p : m.params)
    for (double v : p.value.data)
      detail::write_u64_le(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw DataError("model write failed: " + path);
}

inline Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0)
    throw DataError("not a model file: " + path);
  std::uint64_t hlen = detail::read_u64_le(in);
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw DataError("truncated model header: " + path);
  nlohmann::json header = nlohmann::json::parse(hs, nullptr, false);
  if (header.is_discarded()) throw DataError("corrupt model header: " + path);

  Model m;
  m.arch = parse_architecture(header.at("architecture").get<std::string>());
  m.input_length = header.at("input_length").get<std::size_t>();
  m.num_classes = header.at("num_classes").get<std::size_t>();
  m.hidden = header.value("hidden", std::size_t{32});
  for (const auto& pj : header.at("params")) {
    std::vector<std::size_t> shape = pj.at("shape").get<std::vector<std::size_t>>();
    NdArray a = NdArray::zeros(shape);
    for (auto& v : a.data) {
      std::uint64_t bits = detail::read_u64_le(in);
      v = std::bit_cast<double>(bits);
    }
    m.params.push_back({pj.at("name").get<std::string>(), std::move(a)});
  }
  if (!in) throw DataError("truncated model parameters: " + path);
  return m;
}

}  // namespace tsadv
