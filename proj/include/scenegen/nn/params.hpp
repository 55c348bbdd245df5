#pragma once

#include <cstdint>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "scenegen/nn/tensor.hpp"
#include "scenegen/rng.hpp"

namespace scenegen::nn {

template <typename S>
struct Param {
  std::string name;
  Tensor<S> value;
  Tensor<S> grad;
};

// Closed registry of named parameters with gradient slots. Registration
// order is the canonical iteration order (initialization, Adam, weight IO).
template <typename S>
class ParamRegistry {
 public:
  Param<S>& add(const std::string& name, std::vector<int> shape) {
    if (frozen_) throw std::logic_error("ParamRegistry: frozen, cannot add " + name);
    if (by_name_.count(name)) throw std::logic_error("ParamRegistry: duplicate " + name);
    params_.push_back(Param<S>{name, Tensor<S>(shape), Tensor<S>(std::move(shape))});
    by_name_[name] = static_cast<int>(params_.size()) - 1;
    return params_.back();
  }

  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

  int count() const { return static_cast<int>(params_.size()); }
  Param<S>& operator[](int i) { return params_.at(i); }
  const Param<S>& operator[](int i) const { return params_.at(i); }

  Param<S>& at(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw std::out_of_range("ParamRegistry: no param " + name);
    return params_[it->second];
  }
  const Param<S>& at(const std::string& name) const {
    return const_cast<ParamRegistry*>(this)->at(name);
  }
  bool contains(const std::string& name) const { return by_name_.count(name) > 0; }

  std::size_t total_values() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.data.size();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) p.grad.fill(S(0));
  }

  bool all_finite() const {
    for (const auto& p : params_)
      for (S v : p.value.data)
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  // Copies values (not grads) from another registry with identical layout.
  void copy_values_from(const ParamRegistry& other) {
    if (other.count() != count()) throw std::invalid_argument("copy_values_from: layout mismatch");
    for (int i = 0; i < count(); ++i) {
      if (other[i].name != params_[i].name || !other[i].value.same_shape(params_[i].value))
        throw std::invalid_argument("copy_values_from: layout mismatch at " + params_[i].name);
      params_[i].value.data = other[i].value.data;
    }
  }

 private:
  std::deque<Param<S>> params_;
  std::map<std::string, int> by_name_;
  bool frozen_ = false;
};

// ---------------------------------------------------------------------------
// Initializers

template <typename S>
void init_kaiming_uniform(Tensor<S>& t, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / std::max(1, fan_in));
  for (S& v : t.data) v = static_cast<S>(rng.uniform(-bound, bound));
}

// Orthonormal rows (Gram-Schmidt on a Gaussian draw); used for recurrent
// kernels viewed as [rows, cols] with rows <= cols.
template <typename S>
void init_orthogonal_rows(Tensor<S>& t, int rows, int cols, Rng& rng) {
  std::vector<double> m(std::size_t(rows) * cols);
  for (double& v : m) v = rng.normal();
  for (int r = 0; r < rows; ++r) {
    double* row = m.data() + std::size_t(r) * cols;
    for (int prev = 0; prev < r; ++prev) {
      const double* q = m.data() + std::size_t(prev) * cols;
      double dot = 0.0;
      for (int c = 0; c < cols; ++c) dot += row[c] * q[c];
      for (int c = 0; c < cols; ++c) row[c] -= dot * q[c];
    }
    double norm = 0.0;
    for (int c = 0; c < cols; ++c) norm += row[c] * row[c];
    norm = std::sqrt(norm);
    if (norm < 1e-8) {  // re-draw a degenerate direction
      for (int c = 0; c < cols; ++c) row[c] = rng.normal();
      --r;
      continue;
    }
    for (int c = 0; c < cols; ++c) row[c] /= norm;
  }
  for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = static_cast<S>(m[i]);
}

// ---------------------------------------------------------------------------
// Adam optimizer (bias-corrected)

template <typename S>
struct AdamState {
  std::vector<Tensor<S>> m;
  std::vector<Tensor<S>> v;
  long step = 0;

  static AdamState init(const ParamRegistry<S>& reg) {
    AdamState st;
    for (int i = 0; i < reg.count(); ++i) {
      st.m.push_back(Tensor<S>::zeros(reg[i].value.shape));
      st.v.push_back(Tensor<S>::zeros(reg[i].value.shape));
    }
    return st;
  }
};

template <typename S>
void adam_step(ParamRegistry<S>& reg, AdamState<S>& st, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8) {
  if (static_cast<int>(st.m.size()) != reg.count())
    throw std::invalid_argument("adam_step: state does not match registry");
  st.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.step));
  for (int i = 0; i < reg.count(); ++i) {
    auto& p = reg[i];
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (std::size_t j = 0; j < p.value.data.size(); ++j) {
      const double g = static_cast<double>(p.grad.data[j]);
      const double mj = beta1 * static_cast<double>(m.data[j]) + (1.0 - beta1) * g;
      const double vj = beta2 * static_cast<double>(v.data[j]) + (1.0 - beta2) * g * g;
      m.data[j] = static_cast<S>(mj);
      v.data[j] = static_cast<S>(vj);
      const double update = lr * (mj / bc1) / (std::sqrt(vj / bc2) + eps);
      p.value.data[j] = static_cast<S>(static_cast<double>(p.value.data[j]) - update);
    }
  }
}

// ---------------------------------------------------------------------------
// Weight file: 8-byte magic "SCENEGEN", u32 version, u32 header length, JSON
// header {name: {shape, dtype, offset}}, then a little-endian fp32 payload.

inline constexpr char kWeightMagic[8] = {'S', 'C', 'E', 'N', 'E', 'G', 'E', 'N'};
inline constexpr std::uint32_t kWeightVersion = 1;

struct WeightIoError : std::runtime_error {
  explicit WeightIoError(const std::string& what) : std::runtime_error(what) {}
};

template <typename S>
void save_weights(const ParamRegistry<S>& reg, const std::filesystem::path& path) {
  nlohmann::json header;
  std::uint64_t offset = 0;
  for (int i = 0; i < reg.count(); ++i) {
    const auto& p = reg[i];
    header[p.name] = {{"shape", p.value.shape},
                      {"dtype", "f4"},
                      {"offset", offset}};
    offset += p.value.data.size() * sizeof(float);
  }
  const std::string htext = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw WeightIoError("cannot write " + path.string());
  out.write(kWeightMagic, 8);
  const std::uint32_t version = kWeightVersion;
  const std::uint32_t hlen = static_cast<std::uint32_t>(htext.size());
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&hlen), 4);
  out.write(htext.data(), htext.size());
  std::vector<float> buf;
  for (int i = 0; i < reg.count(); ++i) {
    const auto& p = reg[i];
    buf.resize(p.value.data.size());
    for (std::size_t j = 0; j < buf.size(); ++j) buf[j] = static_cast<float>(p.value.data[j]);
    out.write(reinterpret_cast<const char*>(buf.data()), buf.size() * sizeof(float));
  }
  if (!out) throw WeightIoError("short write to " + path.string());
}

template <typename S>
void load_weights(ParamRegistry<S>& reg, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WeightIoError("cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kWeightMagic, 8) != 0)
    throw WeightIoError(path.string() + ": bad magic");
  std::uint32_t version = 0, hlen = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&hlen), 4);
  if (!in || version != kWeightVersion)
    throw WeightIoError(path.string() + ": unsupported version");
  std::string htext(hlen, '\0');
  in.read(htext.data(), hlen);
  if (!in) throw WeightIoError(path.string() + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(htext);
  } catch (const nlohmann::json::exception& e) {
    throw WeightIoError(path.string() + ": bad header: " + e.what());
  }

  const std::streampos payload_start = in.tellg();
  in.seekg(0, std::ios::end);
  const std::uint64_t payload_bytes = static_cast<std::uint64_t>(in.tellg() - payload_start);

  std::uint64_t expected = 0;
  for (const auto& [name, meta] : header.items()) {
    (void)name;
    if (!meta.contains("shape") || !meta.contains("offset") || meta.value("dtype", "") != "f4")
      throw WeightIoError(path.string() + ": malformed header entry");
    std::uint64_t n = 1;
    for (const auto& d : meta["shape"]) {
      const std::uint64_t dim = d;
      n *= dim;
    }
    expected += n * sizeof(float);
  }
  if (expected != payload_bytes)
    throw WeightIoError(path.string() + ": payload length mismatch");

  std::vector<float> buf;
  for (int i = 0; i < reg.count(); ++i) {
    auto& p = reg[i];
    if (!header.contains(p.name)) throw WeightIoError(path.string() + ": missing " + p.name);
    const auto& meta = header[p.name];
    const std::vector<int> shape = meta["shape"];
    if (shape != p.value.shape)
      throw WeightIoError(path.string() + ": shape mismatch for " + p.name);
    const std::uint64_t offset = meta["offset"];
    in.clear();
    in.seekg(payload_start + static_cast<std::streamoff>(offset));
    buf.resize(p.value.data.size());
    in.read(reinterpret_cast<char*>(buf.data()), buf.size() * sizeof(float));
    if (!in) throw WeightIoError(path.string() + ": truncated payload at " + p.name);
    for (std::size_t j = 0; j < buf.size(); ++j) p.value.data[j] = static_cast<S>(buf[j]);
  }
}

}  // namespace scenegen::nn
