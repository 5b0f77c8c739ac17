#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <random>

#include "tensor.hpp"

namespace sfpn {

// Named parameter set with deterministic (insertion) iteration order.
template <class T>
class ParamStore {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> t) {
    if (index_.count(name))
      throw ArgumentError("duplicate parameter name: " + name);
    t.set_requires_grad(true);
    index_[name] = entries_.size();
    entries_.push_back({name, std::move(t)});
    return entries_.back().second;
  }
  Tensor<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ArgumentError("unknown parameter: " + name);
    return entries_[it->second].second;
  }
  const Tensor<T>& get(const std::string& name) const {
    return const_cast<ParamStore*>(this)->get(name);
  }
  bool contains(const std::string& name) const { return index_.count(name); }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  size_t size() const { return entries_.size(); }

  std::int64_t count_elements(const std::string& prefix = "") const {
    std::int64_t total = 0;
    for (const auto& [name, t] : entries_)
      if (prefix.empty() || name.rfind(prefix, 0) == 0) total += t.size();
    return total;
  }

  void zero_grads() {
    for (auto& [name, t] : entries_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  std::map<std::string, size_t> index_;
};

// SGD with classical momentum:
//   v <- momentum * v + grad;  w <- w - lr * v
// Gradients are zeroed after the step.
template <class T>
class SgdOptimizer {
 public:
  explicit SgdOptimizer(T momentum = T(0)) : momentum_(momentum) {
    if (momentum < T(0) || momentum >= T(1))
      throw ArgumentError("sgd: momentum must be in [0, 1)");
  }

  void step(ParamStore<T>& params, T lr) {
    if (lr <= T(0)) throw ArgumentError("sgd: learning rate must be positive");
    for (auto& [name, t] : params) {
      if (!t.has_grad())
        throw ArgumentError("sgd: parameter '" + name + "' has no gradient");
      auto& v = velocity_[name];
      if (v.size() != t.data().size()) v.assign(t.data().size(), T(0));
      auto& w = t.mutable_data();
      const auto& g = t.grad();
      for (size_t i = 0; i < w.size(); ++i) {
        v[i] = momentum_ * v[i] + g[i];
        w[i] -= lr * v[i];
      }
      check_finite(w, "sgd_step");
      t.zero_grad();
    }
  }

  std::map<std::string, std::vector<T>>& velocity() { return velocity_; }

 private:
  T momentum_;
  std::map<std::string, std::vector<T>> velocity_;
};

// Adam with bias correction:
//   m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2
//   w <- w - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
// Gradients are zeroed after the step.
template <class T>
class AdamOptimizer {
 public:
  explicit AdamOptimizer(T beta1 = T(0.9), T beta2 = T(0.999),
                         T eps = T(1e-8))
      : beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (beta1 < T(0) || beta1 >= T(1) || beta2 < T(0) || beta2 >= T(1))
      throw ArgumentError("adam: betas must be in [0, 1)");
  }

  void step(ParamStore<T>& params, T lr) {
    if (lr <= T(0)) throw ArgumentError("adam: learning rate must be positive");
    ++steps_;
    const double c1 = 1.0 - std::pow(double(beta1_), double(steps_));
    const double c2 = 1.0 - std::pow(double(beta2_), double(steps_));
    for (auto& [name, t] : params) {
      if (!t.has_grad())
        throw ArgumentError("adam: parameter '" + name + "' has no gradient");
      auto& m = moment1_[name];
      auto& v = moment2_[name];
      if (m.size() != t.data().size()) m.assign(t.data().size(), T(0));
      if (v.size() != t.data().size()) v.assign(t.data().size(), T(0));
      auto& w = t.mutable_data();
      const auto& g = t.grad();
      for (size_t i = 0; i < w.size(); ++i) {
        m[i] = beta1_ * m[i] + (T(1) - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (T(1) - beta2_) * g[i] * g[i];
        w[i] -= lr * T(double(m[i]) / c1 /
                       (std::sqrt(double(v[i]) / c2) + double(eps_)));
      }
      check_finite(w, "adam_step");
      t.zero_grad();
    }
  }

  std::map<std::string, std::vector<T>>& moment1() { return moment1_; }
  std::map<std::string, std::vector<T>>& moment2() { return moment2_; }
  std::int64_t& steps() { return steps_; }

 private:
  T beta1_, beta2_, eps_;
  std::int64_t steps_ = 0;
  std::map<std::string, std::vector<T>> moment1_;
  std::map<std::string, std::vector<T>> moment2_;
};

// Kaiming-uniform fan-in initialization for a conv weight [oc,ic,kh,kw].
// fan_scale inflates the fan-in for convs whose input is a sum of several
// same-shaped maps.
template <class T>
void kaiming_uniform(Tensor<T>& w, std::mt19937_64& rng,
                     double fan_scale = 1.0) {
  const Shape4& s = w.shape();
  double fan_in = fan_scale * double(s[1]) * s[2] * s[3];
  double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& x : w.mutable_data()) x = T(dist(rng));
}

// ---- checkpoint container ----
// Flat binary layout: magic "SFPN", u32 version, u32 entry count, then per
// entry: u16 name length, UTF-8 name, 4 x u32 dims, little-endian f32
// payload. Round-trips bit-exactly for float tensors.

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class U>
void write_pod(std::ostream& os, U v) {
  static_assert(std::endian::native == std::endian::little);
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <class U>
U read_pod(std::istream& is) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(v)))
    throw DataError("checkpoint: truncated file");
  return v;
}

}  // namespace detail

template <class T>
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor<T>>>& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  os.write("SFPN", 4);
  detail::write_pod<std::uint32_t>(os, kCheckpointVersion);
  detail::write_pod<std::uint32_t>(os, std::uint32_t(entries.size()));
  for (const auto& [name, t] : entries) {
    if (name.size() > 0xffff) throw ArgumentError("checkpoint name too long");
    detail::write_pod<std::uint16_t>(os, std::uint16_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    for (int d : t.shape()) detail::write_pod<std::uint32_t>(os, std::uint32_t(d));
    for (T x : t.data()) detail::write_pod<float>(os, float(x));
  }
  if (!os) throw DataError("checkpoint write failed: " + path);
}

template <class T>
void save_checkpoint(const std::string& path, const ParamStore<T>& params) {
  std::vector<std::pair<std::string, Tensor<T>>> entries(params.begin(),
                                                         params.end());
  save_checkpoint(path, entries);
}

template <class T>
std::vector<std::pair<std::string, Tensor<T>>> load_checkpoint(
    const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "SFPN", 4) != 0)
    throw DataError("checkpoint: bad magic in " + path);
  auto version = detail::read_pod<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  auto count = detail::read_pod<std::uint32_t>(is);
  std::vector<std::pair<std::string, Tensor<T>>> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name_len = detail::read_pod<std::uint16_t>(is);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len))
      throw DataError("checkpoint: truncated name");
    Shape4 shape;
    for (int d = 0; d < 4; ++d) {
      auto v = detail::read_pod<std::uint32_t>(is);
      if (v == 0) throw DataError("checkpoint: zero dimension");
      shape[size_t(d)] = int(v);
    }
    std::vector<T> data(size_t(numel(shape)));
    for (auto& x : data) x = T(detail::read_pod<float>(is));
    entries.emplace_back(std::move(name),
                         Tensor<T>::from_data(shape, std::move(data)));
  }
  return entries;
}

}  // namespace sfpn
