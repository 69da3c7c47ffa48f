// Named parameters, gradient accumulators and Adam state.
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "epnet/core/array.hpp"
#include "epnet/core/nn.hpp"
#include "epnet/core/rng.hpp"

namespace epnet {

struct AdamConfig {
  double lr = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.001;
};

class ParamStore {
 public:
  struct Entry {
    Array value;
    Array grad;
    Array m;
    Array v;
    bool touched = false;
  };

  // Registers a parameter with the given initial value. Names are unique.
  void add(const std::string& name, Array value) {
    if (entries_.count(name)) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
    Entry e{value, Array(value.shape()), Array(value.shape()), Array(value.shape()), false};
    entries_.emplace(name, std::move(e));
  }

  // Glorot-uniform weight in +-sqrt(6 / (fan_in + fan_out)).
  void add_glorot(const std::string& name, Shape shape, std::size_t fan_in, std::size_t fan_out,
                  Rng& rng) {
    Array a(std::move(shape));
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : a.raw()) v = rng.uniform(-limit, limit);
    add(name, std::move(a));
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  std::size_t size() const { return entries_.size(); }
  std::uint64_t step() const { return step_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, e] : entries_) n += e.value.size();
    return n;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : entries_) out.push_back(k);
    return out;
  }

  const Array& value(const std::string& name) const { return entry(name).value; }
  Array& value(const std::string& name) { return entry(name).value; }
  const Array& grad(const std::string& name) const { return entry(name).grad; }
  bool touched(const std::string& name) const { return entry(name).touched; }

  void accumulate_grad(const std::string& name, const Array& g) {
    Entry& e = entry(name);
    e.grad += g;
    e.touched = true;
  }

  void zero_grad() {
    for (auto& [_, e] : entries_) {
      e.grad.fill(0.0);
      e.touched = false;
    }
  }

  // Bias-corrected Adam with L2 weight decay folded into the gradient.
  // Every parameter must have received a gradient since the last step.
  void adam_step(const AdamConfig& cfg) {
    for (const auto& [name, e] : entries_) {
      if (!e.touched) throw std::logic_error("adam_step: missing gradient for parameter " + name);
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
    for (auto& [_, e] : entries_) {
      for (std::size_t i = 0; i < e.value.size(); ++i) {
        const double g = e.grad[i] + cfg.weight_decay * e.value[i];
        e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g;
        e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = e.m[i] / bc1;
        const double vhat = e.v[i] / bc2;
        e.value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
      }
    }
    zero_grad();
  }

  // Checkpoint layout (all integers and reals little-endian):
  //   "EPNP" | u32 version=1 | u64 step | u64 count |
  //   count x { u32 name_len | name | u32 rank | u64 dims[rank] | f64 value[] | f64 m[] | f64 v[] }
  void save(std::ostream& os) const {
    static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");
    os.write("EPNP", 4);
    put<std::uint32_t>(os, 1);
    put<std::uint64_t>(os, step_);
    put<std::uint64_t>(os, entries_.size());
    for (const auto& [name, e] : entries_) {
      put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint32_t>(os, static_cast<std::uint32_t>(e.value.rank()));
      for (std::size_t d : e.value.shape()) put<std::uint64_t>(os, d);
      for (const Array* a : {&e.value, &e.m, &e.v}) {
        os.write(reinterpret_cast<const char*>(a->data()),
                 static_cast<std::streamsize>(a->size() * sizeof(double)));
      }
    }
    if (!os) throw std::runtime_error("ParamStore::save: write failed");
  }

  static ParamStore load(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "EPNP", 4) != 0) throw std::runtime_error("checkpoint: bad magic");
    if (get<std::uint32_t>(is) != 1) throw std::runtime_error("checkpoint: unsupported version");
    ParamStore store;
    store.step_ = get<std::uint64_t>(is);
    const auto count = get<std::uint64_t>(is);
    for (std::uint64_t i = 0; i < count; ++i) {
      const auto len = get<std::uint32_t>(is);
      std::string name(len, '\0');
      is.read(name.data(), len);
      const auto rank = get<std::uint32_t>(is);
      Shape shape(rank);
      for (auto& d : shape) d = get<std::uint64_t>(is);
      Entry e{Array(shape), Array(shape), Array(shape), Array(shape), false};
      for (Array* a : {&e.value, &e.m, &e.v}) {
        is.read(reinterpret_cast<char*>(a->data()), static_cast<std::streamsize>(a->size() * sizeof(double)));
      }
      if (!is) throw std::runtime_error("checkpoint: truncated at parameter " + name);
      store.entries_.emplace(std::move(name), std::move(e));
    }
    return store;
  }

  bool same_state(const ParamStore& o) const {
    if (step_ != o.step_ || entries_.size() != o.entries_.size()) return false;
    auto it = o.entries_.begin();
    for (const auto& [name, e] : entries_) {
      if (name != it->first) return false;
      const Entry& f = it->second;
      if (e.value.shape() != f.value.shape() || e.value.raw() != f.value.raw() || e.m.raw() != f.m.raw() ||
          e.v.raw() != f.v.raw()) {
        return false;
      }
      ++it;
    }
    return true;
  }

 private:
  Entry& entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("ParamStore: unknown parameter " + name);
    return it->second;
  }
  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("ParamStore: unknown parameter " + name);
    return it->second;
  }

  template <class T>
  static void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  template <class T>
  static T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated");
    return v;
  }

  std::map<std::string, Entry> entries_;
  std::uint64_t step_ = 0;
};

// Fully connected layer bound to parameters "<name>.w" and "<name>.b".
struct Dense {
  std::string name;
  std::size_t in = 0;
  std::size_t out = 0;
  bool bias = true;

  void init(ParamStore& store, Rng& rng) const {
    store.add_glorot(name + ".w", {in, out}, in, out, rng);
    if (bias) store.add(name + ".b", Array({out}));
  }

  std::pair<Array, LinearTape> forward(const ParamStore& store, const Array& x) const {
    return linear(store.value(name + ".w"), bias ? &store.value(name + ".b") : nullptr, x);
  }

  Array backward(ParamStore& store, LinearTape& tape, const Array& gy) const {
    LinearGrads g = linear_backward(tape, store.value(name + ".w"), bias, gy);
    store.accumulate_grad(name + ".w", g.weight);
    if (bias) store.accumulate_grad(name + ".b", *g.bias);
    return std::move(g.x);
  }
};

// 3x3 convolution bound to "<name>.k" and "<name>.b".
struct Conv3x3 {
  std::string name;
  std::size_t in = 0;
  std::size_t out = 0;
  int stride = 1;

  void init(ParamStore& store, Rng& rng) const {
    store.add_glorot(name + ".k", {3, 3, in, out}, 9 * in, 9 * out, rng);
    store.add(name + ".b", Array({out}));
  }

  std::pair<Array, ConvTape> forward(const ParamStore& store, const Array& x) const {
    return conv2d_3x3(store.value(name + ".k"), &store.value(name + ".b"), x, stride);
  }

  Array backward(ParamStore& store, ConvTape& tape, const Array& gy) const {
    ConvGrads g = conv2d_3x3_backward(tape, store.value(name + ".k"), true, gy);
    store.accumulate_grad(name + ".k", g.kernel);
    store.accumulate_grad(name + ".b", *g.bias);
    return std::move(g.input);
  }
};

}  // namespace epnet
