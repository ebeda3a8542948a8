#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ocwm/nn/graph.hpp"
#include "ocwm/nn/tensor.hpp"

namespace ocwm::nn {

// Named parameters plus Adam state. Tensors share buffers, so graphs bind
// them without copying and adam_step mutates them in place.
template <typename T>
class ParamStore {
 public:
  Tensor<T>& create(const std::string& name, Tensor<T> init) {
    if (entries_.count(name)) throw DimensionError("param exists: " + name);
    Entry e;
    e.value = std::move(init);
    e.m = Tensor<T>(e.value.shape());
    e.v = Tensor<T>(e.value.shape());
    return entries_.emplace(name, std::move(e)).first->second.value;
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  Tensor<T>& get(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw DimensionError("unknown param: " + name);
    return it->second.value;
  }
  const Tensor<T>& get(const std::string& name) const {
    return const_cast<ParamStore*>(this)->get(name);
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
  }

  long param_count() const {
    long n = 0;
    for (const auto& [k, e] : entries_) n += e.value.numel();
    return n;
  }

  void set_trainable(bool on) { trainable_ = on; }
  bool trainable() const { return trainable_; }

  long step() const { return step_; }

  // One Adam update over all named grads present in `grads`.
  void adam_step(const std::map<std::string, Tensor<T>>& grads, T lr, T beta1 = T(0.9),
                 T beta2 = T(0.999), T eps = T(1e-8)) {
    ++step_;
    T bc1 = T(1) - std::pow(beta1, T(step_));
    T bc2 = T(1) - std::pow(beta2, T(step_));
    for (const auto& [name, g] : grads) {
      Entry& e = entries_.at(name);
      if (!e.value.same_shape(g)) throw DimensionError("adam: grad shape mismatch " + name);
      for (long i = 0; i < g.numel(); ++i) {
        e.m[i] = beta1 * e.m[i] + (T(1) - beta1) * g[i];
        e.v[i] = beta2 * e.v[i] + (T(1) - beta2) * g[i] * g[i];
        T mhat = e.m[i] / bc1;
        T vhat = e.v[i] / bc2;
        e.value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  // ---- checkpoint container: u64 LE index length, JSON index, raw payload ----

  void save(const std::filesystem::path& path, const nlohmann::json& meta = {}) const {
    nlohmann::json index;
    index["format"] = "ocwm-ckpt-v1";
    index["dtype"] = dtype_name();
    index["step"] = step_;
    index["meta"] = meta;
    nlohmann::json tensors = nlohmann::json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, e] : entries_) {
      for (const char* kind : {"p", "m", "v"}) {
        const Tensor<T>& t = kind[0] == 'p' ? e.value : (kind[0] == 'm' ? e.m : e.v);
        nlohmann::json rec;
        rec["shape"] = t.shape();
        rec["offset"] = offset;
        tensors[std::string(kind) + "/" + name] = rec;
        offset += static_cast<std::uint64_t>(t.numel()) * sizeof(T);
      }
    }
    index["tensors"] = tensors;
    std::string idx = index.dump();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("checkpoint: cannot open for write: " + path.string());
    std::uint64_t n = idx.size();
    f.write(reinterpret_cast<const char*>(&n), 8);
    f.write(idx.data(), static_cast<std::streamsize>(idx.size()));
    for (const auto& [name, e] : entries_)
      for (const Tensor<T>* t : {&e.value, &e.m, &e.v})
        f.write(reinterpret_cast<const char*>(t->data()),
                static_cast<std::streamsize>(t->numel() * sizeof(T)));
    if (!f) throw FormatError("checkpoint: write failed: " + path.string());
  }

  static ParamStore load(const std::filesystem::path& path, nlohmann::json* meta_out = nullptr) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingArtifactError("checkpoint not found: " + path.string());
    std::uint64_t n = 0;
    f.read(reinterpret_cast<char*>(&n), 8);
    std::string idx(n, '\0');
    f.read(idx.data(), static_cast<std::streamsize>(n));
    if (!f) throw FormatError("checkpoint: truncated index: " + path.string());
    nlohmann::json index = nlohmann::json::parse(idx, nullptr, false);
    if (index.is_discarded() || index.value("format", "") != "ocwm-ckpt-v1")
      throw FormatError("checkpoint: bad index: " + path.string());
    if (index.value("dtype", "") != dtype_name())
      throw FormatError("checkpoint: dtype mismatch (" + index.value("dtype", std::string()) +
                        " vs " + dtype_name() + "): " + path.string());
    ParamStore ps;
    ps.step_ = index.value("step", 0L);
    if (meta_out) *meta_out = index.value("meta", nlohmann::json::object());
    std::uint64_t payload_base = 8 + n;
    for (auto& [key, rec] : index.at("tensors").items()) {
      if (key.rfind("p/", 0) != 0) continue;
      std::string name = key.substr(2);
      std::vector<int> shape = rec.at("shape").template get<std::vector<int>>();
      Entry e;
      e.value = read_tensor(f, payload_base, rec, shape, path);
      e.m = read_tensor(f, payload_base, index.at("tensors").at("m/" + name), shape, path);
      e.v = read_tensor(f, payload_base, index.at("tensors").at("v/" + name), shape, path);
      ps.entries_.emplace(name, std::move(e));
    }
    return ps;
  }

 private:
  struct Entry {
    Tensor<T> value, m, v;
  };

  static std::string dtype_name() { return sizeof(T) == 4 ? "f32" : "f64"; }

  static Tensor<T> read_tensor(std::ifstream& f, std::uint64_t payload_base,
                               const nlohmann::json& rec, const std::vector<int>& shape,
                               const std::filesystem::path& path) {
    Tensor<T> t(shape);
    std::uint64_t off = rec.at("offset").get<std::uint64_t>();
    f.seekg(static_cast<std::streamoff>(payload_base + off));
    f.read(reinterpret_cast<char*>(t.data()),
           static_cast<std::streamsize>(t.numel() * sizeof(T)));
    if (!f) throw FormatError("checkpoint: truncated payload: " + path.string());
    return t;
  }

  std::map<std::string, Entry> entries_;
  long step_ = 0;
  bool trainable_ = true;
};

// Linear warmup from 0 to base_lr over warmup_fraction*total steps, then
// cosine decay to 0 at `total`; clamped beyond.
inline double cosine_schedule(long step, long total, double warmup_fraction, double base_lr) {
  if (total <= 0) throw DimensionError("cosine_schedule: total must be positive");
  if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
    throw DimensionError("cosine_schedule: warmup_fraction must be in [0,1)");
  if (step >= total) return 0.0;
  double warm = warmup_fraction * static_cast<double>(total);
  if (warm > 0.0 && static_cast<double>(step) < warm)
    return base_lr * static_cast<double>(step) / warm;
  double prog = (static_cast<double>(step) - warm) / (static_cast<double>(total) - warm);
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * prog));
}

// Per-graph parameter binding: each name maps to one node, shared buffer.
template <typename T>
class GraphParams {
 public:
  GraphParams(Graph<T>& g, ParamStore<T>& store) : g_(&g), store_(&store) {}

  typename Graph<T>::Var operator()(const std::string& name) {
    auto it = vars_.find(name);
    if (it != vars_.end()) return it->second;
    typename Graph<T>::Var v = g_->input(store_->get(name), store_->trainable());
    vars_.emplace(name, v);
    return v;
  }

  ParamStore<T>& store() { return *store_; }
  Graph<T>& graph() { return *g_; }

  // Adds this graph's parameter gradients into `acc` (creating entries).
  void accumulate_grads(std::map<std::string, Tensor<T>>& acc) const {
    for (const auto& [name, var] : vars_) {
      const Tensor<T>& g = g_->grad(var);
      if (g.empty()) continue;
      auto it = acc.find(name);
      if (it == acc.end()) {
        acc.emplace(name, g.clone());
      } else {
        Tensor<T>& dst = it->second;
        for (long i = 0; i < g.numel(); ++i) dst[i] += g[i];
      }
    }
  }

 private:
  Graph<T>* g_;
  ParamStore<T>* store_;
  std::map<std::string, typename Graph<T>::Var> vars_;
};

}  // namespace ocwm::nn
