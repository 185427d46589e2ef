#pragma once

#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "hashing.hpp"
#include "tape.hpp"
#include "tensor.hpp"

namespace argus {

// Named parameter tensors with per-tensor freeze flags. std::map keeps
// iteration deterministic, which the fingerprints and the optimizer rely on.
template <typename T>
class ParameterStore {
public:
  struct Entry {
    Mat<T> tensor;
    bool frozen = false;
  };

  Mat<T>& add(const std::string& name, Mat<T> m, bool frozen = false) {
    auto [it, fresh] = entries_.try_emplace(name, Entry{std::move(m), frozen});
    if (!fresh) throw InvalidConfig("duplicate parameter: " + name);
    return it->second.tensor;
  }

  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  Entry& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw InvalidConfig("unknown parameter: " + name);
    return it->second;
  }
  const Entry& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw InvalidConfig("unknown parameter: " + name);
    return it->second;
  }

  Mat<T>& tensor(const std::string& name) { return at(name).tensor; }
  const Mat<T>& tensor(const std::string& name) const { return at(name).tensor; }
  bool frozen(const std::string& name) const { return at(name).frozen; }
  void set_frozen(const std::string& name, bool f) { at(name).frozen = f; }

  // Freeze/unfreeze every parameter whose name starts with "<prefix>."
  // (or equals the prefix).
  void set_frozen_prefix(const std::string& prefix, bool f) {
    bool hit = false;
    for (auto& [name, e] : entries_) {
      if (name == prefix || name.rfind(prefix + ".", 0) == 0) {
        e.frozen = f;
        hit = true;
      }
    }
    if (!hit) throw InvalidConfig("freeze prefix matches nothing: " + prefix);
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  size_t size() const { return entries_.size(); }

  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& [k, e] : entries_) n += static_cast<size_t>(e.tensor.size());
    return n;
  }

  // Content fingerprint over (name, shape, frozen, raw bytes), name-sorted.
  // With an optional prefix filter it fingerprints one module's slice, which
  // is what the freeze ledger checks compare across stages.
  uint64_t fingerprint(const std::set<std::string>& prefixes = {}) const {
    Fnv1a h;
    for (const auto& [name, e] : entries_) {
      if (!prefixes.empty() && !matches_any(name, prefixes)) continue;
      h.update(name);
      h.update_pod(static_cast<int64_t>(e.tensor.rows()));
      h.update_pod(static_cast<int64_t>(e.tensor.cols()));
      h.update_pod(static_cast<uint8_t>(e.frozen ? 1 : 0));
      h.update(e.tensor.data(), sizeof(T) * e.tensor.size());
    }
    return h.digest();
  }

  static bool matches_any(const std::string& name,
                          const std::set<std::string>& prefixes) {
    for (const auto& p : prefixes)
      if (name == p || name.rfind(p + ".", 0) == 0) return true;
    return false;
  }

private:
  std::map<std::string, Entry> entries_;
};

template <typename T>
using GradStore = std::map<std::string, Mat<T>>;

// Ties a tape to a parameter store for one forward/backward pass. P() memoizes
// leaf nodes per parameter so reuse within a graph accumulates gradients on a
// single node, and flush_grads() moves them into a GradStore afterwards.
template <typename T>
struct ModelCtx {
  Tape<T>& tape;
  ParameterStore<T>& store;
  bool train = true;

  std::unordered_map<std::string, int> bound;

  int P(const std::string& name) {
    auto it = bound.find(name);
    if (it != bound.end()) return it->second;
    auto& e = store.at(name);
    int id = ad::leaf(tape, e.tensor, train && !e.frozen);
    bound.emplace(name, id);
    return id;
  }

  void flush_grads(GradStore<T>& grads) {
    for (const auto& [name, id] : bound) {
      if (!tape.needs(id) || !tape.has_grad(id)) continue;
      auto it = grads.find(name);
      if (it == grads.end())
        grads.emplace(name, tape.grad(id));
      else
        it->second += tape.grad(id);
    }
  }
};

// AdamW with decoupled weight decay. Hyperparameters follow the training
// setup this reproduces: beta1 0.9, beta2 0.999, weight decay 0.05, eps 1e-8.
struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.05;
  double eps = 1e-8;
};

template <typename T>
struct OptimizerState {
  AdamWConfig cfg;
  int64_t step = 0;  // completed steps
  std::map<std::string, Mat<T>> m;
  std::map<std::string, Mat<T>> v;
};

// One optimizer step. Frozen parameters are skipped entirely (bitwise
// untouched, no moment allocation); a missing gradient for a trainable
// parameter is an error.
template <typename T>
void adamw_step(ParameterStore<T>& params, const GradStore<T>& grads,
                OptimizerState<T>& state, double lr) {
  const AdamWConfig& c = state.cfg;
  const int64_t t_step = state.step + 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t_step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t_step));
  for (auto& [name, e] : params) {
    if (e.frozen) continue;
    auto git = grads.find(name);
    if (git == grads.end())
      throw GradError("adamw_step: no gradient for trainable parameter " + name);
    const Mat<T>& g = git->second;
    check_shape(g.rows() == e.tensor.rows() && g.cols() == e.tensor.cols(),
                "adamw_step: gradient shape mismatch");
    Mat<T>& m = state.m.try_emplace(name, Mat<T>::Zero(g.rows(), g.cols()))
                    .first->second;
    Mat<T>& v = state.v.try_emplace(name, Mat<T>::Zero(g.rows(), g.cols()))
                    .first->second;
    m = static_cast<T>(c.beta1) * m + static_cast<T>(1.0 - c.beta1) * g;
    v = (static_cast<T>(c.beta2) * v.array() +
         static_cast<T>(1.0 - c.beta2) * g.array().square())
            .matrix();
    Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic> mhat = m.array() / static_cast<T>(bc1);
    Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic> vhat = v.array() / static_cast<T>(bc2);
    e.tensor.array() -=
        static_cast<T>(lr) *
        (mhat / (vhat.sqrt() + static_cast<T>(c.eps)) +
         static_cast<T>(c.weight_decay) * e.tensor.array());
  }
  state.step += 1;
}

// Linear warmup then cosine decay. The published setup warms up from 1e-8 to
// 1e-4 and decays to 1e-5 for pretraining; fine-tuning decays 1e-5 -> 1e-6.
struct LrSchedule {
  double warmup_start = 1e-8;
  double peak = 1e-4;
  double floor = 1e-5;
  int64_t warmup_steps = 0;
  int64_t total_steps = 0;
};

inline LrSchedule pretrain_schedule(int64_t total, int64_t warmup) {
  return LrSchedule{1e-8, 1e-4, 1e-5, warmup, total};
}
inline LrSchedule finetune_schedule(int64_t total, int64_t warmup) {
  return LrSchedule{1e-8, 1e-5, 1e-6, warmup, total};
}

// lr for optimizer step s in [0, total]. Boundary steps return the schedule
// constants exactly; interior points interpolate (linear, then cosine).
inline double lr_at_step(const LrSchedule& s, int64_t step) {
  if (s.total_steps <= 0 || s.warmup_steps < 0 || s.warmup_steps > s.total_steps)
    throw InvalidConfig("lr schedule: bad step counts");
  if (step < 0 || step > s.total_steps)
    throw RangeError("lr_at_step: step outside [0, total]");
  if (step == 0) return s.warmup_start;
  if (step == s.warmup_steps) return s.peak;
  if (step == s.total_steps) return s.floor;
  if (step < s.warmup_steps) {
    double f = static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    return s.warmup_start + f * (s.peak - s.warmup_start);
  }
  double f = static_cast<double>(step - s.warmup_steps) /
             static_cast<double>(s.total_steps - s.warmup_steps);
  return s.floor + 0.5 * (s.peak - s.floor) * (1.0 + std::cos(M_PI * f));
}

}  // namespace argus
