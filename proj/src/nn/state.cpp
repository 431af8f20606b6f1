#include "clta/nn/state.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "clta/errors.hpp"

namespace clta::nn {

bool is_norm_role(ParamRole role) { return role == ParamRole::NormGamma || role == ParamRole::NormBeta; }
bool is_head_role(ParamRole role) { return role == ParamRole::HeadWeight || role == ParamRole::HeadBias; }

namespace {

// Visits (tensor, role, index) for every parameter in a fixed order.
template <typename Model, typename Fn>
void for_each_param(Model& model, Fn&& fn) {
  for (std::size_t i = 0; i < model.backbone.size(); ++i) {
    std::visit(
        [&](auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, DenseLayer> || std::is_same_v<T, ConvLayer>) {
            fn(l.weight, ParamRole::BackboneWeight, i);
            fn(l.bias, ParamRole::BackboneBias, i);
          } else if constexpr (std::is_same_v<T, BatchNormLayer> || std::is_same_v<T, AltNormLayer>) {
            fn(l.gamma, ParamRole::NormGamma, i);
            fn(l.beta, ParamRole::NormBeta, i);
          }
        },
        model.backbone[i]);
  }
  for (std::size_t h = 0; h < model.heads.size(); ++h) {
    fn(model.heads[h].weight, ParamRole::HeadWeight, h);
    fn(model.heads[h].bias, ParamRole::HeadBias, h);
  }
}

// FNV-1a, 64-bit.
class Hasher {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
  }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void tensor(const ad::Tensor& t) {
    u64(t.size());
    for (double v : t.values()) u64(std::bit_cast<std::uint64_t>(v));
  }
  std::uint64_t value() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

bool in_scope(ParamRole role, StateScope scope) {
  switch (scope) {
    case StateScope::All:
    case StateScope::Parameters: return true;
    case StateScope::BackboneParameters: return !is_head_role(role);
    case StateScope::Heads: return is_head_role(role);
    case StateScope::NormAffine: return is_norm_role(role);
    case StateScope::NonNormParameters: return !is_norm_role(role);
    case StateScope::RunningStats: return false;
  }
  return false;
}

}  // namespace

std::vector<ParamRef> parameters(IncrementalModel& model) {
  std::vector<ParamRef> refs;
  for_each_param(model, [&](ad::Tensor& t, ParamRole role, std::size_t index) { refs.push_back({&t, role, index}); });
  return refs;
}

void set_trainable(IncrementalModel& model, const std::function<bool(const ParamRef&)>& keep) {
  for (auto& ref : parameters(model)) ref.tensor->set_requires_grad(keep(ref));
}

void zero_grads(IncrementalModel& model) {
  for (auto& ref : parameters(model)) ref.tensor->clear_grad();
}

std::uint64_t checksum(const IncrementalModel& model, StateScope scope) {
  Hasher h;
  if (scope == StateScope::All) {
    const auto bytes = serialize(model);
    h.bytes(bytes.data(), bytes.size());
    return h.value();
  }
  for_each_param(model, [&](const ad::Tensor& t, ParamRole role, std::size_t index) {
    if (!in_scope(role, scope)) return;
    h.u64(static_cast<std::uint64_t>(role));
    h.u64(index);
    h.tensor(t);
  });
  if (scope == StateScope::RunningStats) {
    for (std::size_t i = 0; i < model.backbone.size(); ++i) {
      if (const auto* bn = std::get_if<BatchNormLayer>(&model.backbone[i])) {
        h.u64(i);
        h.tensor(bn->running_mean);
        h.tensor(bn->running_var);
      }
    }
  }
  return h.value();
}

std::uint64_t head_checksum(const IncrementalModel& model, std::size_t head) {
  if (head >= model.heads.size()) throw IndexError("head index out of range");
  Hasher h;
  h.tensor(model.heads[head].weight);
  h.tensor(model.heads[head].bias);
  return h.value();
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

enum class LayerTag : std::uint8_t {
  Dense = 1,
  Conv = 2,
  BatchNorm = 3,
  AltNorm = 4,
  Relu = 5,
  GlobalPool = 6,
  Flatten = 7,
};

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double d) {
    const auto v = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void shape(const ad::Shape& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    for (auto d : s) u32(static_cast<std::uint32_t>(d));
  }
  void tensor(const ad::Tensor& t) {
    shape(t.shape());
    for (double v : t.values()) f64(v);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return std::bit_cast<double>(v);
  }
  ad::Shape shape() {
    const auto rank = u32();
    if (rank > 8) throw FormatError("snapshot: implausible tensor rank " + std::to_string(rank));
    ad::Shape s(rank);
    for (auto& d : s) d = u32();
    return s;
  }
  ad::Tensor tensor(bool trainable) {
    auto s = shape();
    const auto n = ad::element_count(s);
    if (n > (bytes_.size() - pos_) / 8) throw IoError("snapshot: truncated tensor data");
    std::vector<double> values(n);
    for (auto& v : values) v = f64();
    ad::Tensor t(std::move(s), std::move(values));
    t.set_requires_grad(trainable);
    return t;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError("snapshot: unexpected end of data");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

constexpr char kMagic[4] = {'C', 'L', 'T', 'A'};

}  // namespace

std::vector<std::uint8_t> serialize(const IncrementalModel& model) {
  Writer w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(kSnapshotVersion);
  w.shape(model.input_shape);
  w.u32(static_cast<std::uint32_t>(model.feature_dim));
  w.u32(static_cast<std::uint32_t>(model.backbone.size()));
  for (const auto& layer : model.backbone) {
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, DenseLayer>) {
            w.u8(static_cast<std::uint8_t>(LayerTag::Dense));
            w.tensor(l.weight);
            w.tensor(l.bias);
          } else if constexpr (std::is_same_v<T, ConvLayer>) {
            w.u8(static_cast<std::uint8_t>(LayerTag::Conv));
            w.u32(static_cast<std::uint32_t>(l.stride));
            w.u32(static_cast<std::uint32_t>(l.padding));
            w.tensor(l.weight);
            w.tensor(l.bias);
          } else if constexpr (std::is_same_v<T, BatchNormLayer>) {
            w.u8(static_cast<std::uint8_t>(LayerTag::BatchNorm));
            w.f64(l.momentum);
            w.f64(l.eps);
            w.u8(static_cast<std::uint8_t>(l.adapt_forward));
            w.tensor(l.gamma);
            w.tensor(l.beta);
            w.tensor(l.running_mean);
            w.tensor(l.running_var);
          } else if constexpr (std::is_same_v<T, AltNormLayer>) {
            w.u8(static_cast<std::uint8_t>(LayerTag::AltNorm));
            w.u8(static_cast<std::uint8_t>(l.kind));
            w.u32(static_cast<std::uint32_t>(l.groups));
            w.f64(l.eps);
            w.tensor(l.gamma);
            w.tensor(l.beta);
          } else if constexpr (std::is_same_v<T, ReluLayer>) {
            w.u8(static_cast<std::uint8_t>(LayerTag::Relu));
          } else if constexpr (std::is_same_v<T, GlobalPoolLayer>) {
            w.u8(static_cast<std::uint8_t>(LayerTag::GlobalPool));
          } else {
            w.u8(static_cast<std::uint8_t>(LayerTag::Flatten));
          }
        },
        layer);
  }
  w.u32(static_cast<std::uint32_t>(model.heads.size()));
  for (const auto& h : model.heads) {
    w.tensor(h.weight);
    w.tensor(h.bias);
  }
  return w.take();
}

IncrementalModel deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  for (char c : kMagic) {
    if (r.u8() != static_cast<std::uint8_t>(c)) throw FormatError("snapshot: bad magic (expected \"CLTA\")");
  }
  const auto version = r.u32();
  if (version != kSnapshotVersion) throw FormatError("snapshot: unsupported format version " + std::to_string(version));

  IncrementalModel model;
  model.input_shape = r.shape();
  model.feature_dim = r.u32();
  const auto layers = r.u32();
  for (std::uint32_t i = 0; i < layers; ++i) {
    const auto tag = static_cast<LayerTag>(r.u8());
    switch (tag) {
      case LayerTag::Dense: {
        DenseLayer d;
        d.weight = r.tensor(true);
        d.bias = r.tensor(true);
        model.backbone.emplace_back(std::move(d));
        break;
      }
      case LayerTag::Conv: {
        ConvLayer c;
        c.stride = r.u32();
        c.padding = r.u32();
        c.weight = r.tensor(true);
        c.bias = r.tensor(true);
        model.backbone.emplace_back(std::move(c));
        break;
      }
      case LayerTag::BatchNorm: {
        BatchNormLayer bn;
        bn.momentum = r.f64();
        bn.eps = r.f64();
        const auto rule = r.u8();
        if (rule > 1) throw FormatError("snapshot: unknown adapt-forward rule");
        bn.adapt_forward = static_cast<AdaptForward>(rule);
        bn.gamma = r.tensor(true);
        bn.beta = r.tensor(true);
        bn.running_mean = r.tensor(false);
        bn.running_var = r.tensor(false);
        bn.num_features = bn.gamma.size();
        model.backbone.emplace_back(std::move(bn));
        break;
      }
      case LayerTag::AltNorm: {
        AltNormLayer n;
        const auto kind = r.u8();
        if (kind > 1) throw FormatError("snapshot: unknown normalization kind");
        n.kind = static_cast<AltNormKind>(kind);
        n.groups = r.u32();
        n.eps = r.f64();
        n.gamma = r.tensor(true);
        n.beta = r.tensor(true);
        n.num_channels = n.gamma.size();
        model.backbone.emplace_back(std::move(n));
        break;
      }
      case LayerTag::Relu: model.backbone.emplace_back(ReluLayer{}); break;
      case LayerTag::GlobalPool: model.backbone.emplace_back(GlobalPoolLayer{}); break;
      case LayerTag::Flatten: model.backbone.emplace_back(FlattenLayer{}); break;
      default: throw FormatError("snapshot: unknown layer tag " + std::to_string(static_cast<int>(tag)));
    }
  }
  const auto heads = r.u32();
  for (std::uint32_t i = 0; i < heads; ++i) {
    DenseLayer h;
    h.weight = r.tensor(true);
    h.bias = r.tensor(true);
    model.heads.push_back(std::move(h));
  }
  if (!r.done()) throw FormatError("snapshot: trailing bytes");
  return model;
}

void save_model(const IncrementalModel& model, const std::filesystem::path& path) {
  const auto bytes = serialize(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

IncrementalModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace clta::nn
