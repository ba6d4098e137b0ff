#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "traj/graph.hpp"
#include "traj/rng.hpp"
#include "traj/tensor.hpp"

namespace traj {

// Named parameter tensors plus AdamW moments and a step counter.
// Creation fixes a tensor's shape; lookups validate existence.
class ParameterStore {
 public:
  Mat& create(const std::string& name, int rows, int cols);
  const Mat& get(const std::string& name) const;
  Mat& get_mutable(const std::string& name);
  bool has(const std::string& name) const { return params_.count(name) > 0; }

  const std::map<std::string, Mat>& params() const { return params_; }
  std::map<std::string, Mat>& params_mutable() { return params_; }
  std::map<std::string, Mat>& moments_m() { return m_; }
  std::map<std::string, Mat>& moments_v() { return v_; }
  const std::map<std::string, Mat>& moments_m() const { return m_; }
  const std::map<std::string, Mat>& moments_v() const { return v_; }

  int64_t step() const { return step_; }
  void set_step(int64_t s) { step_ = s; }

 private:
  std::map<std::string, Mat> params_;
  std::map<std::string, Mat> m_, v_;
  int64_t step_ = 0;
};

using GradList = std::vector<std::pair<std::string, Mat>>;

// ------------------------------------------------------------------- layers

// x @ W + b with W named `name.w` (in x out) and b named `name.b` (1 x out).
void init_linear(ParameterStore& store, Rng& rng, const std::string& name, int in, int out,
                 bool zero = false);
VarId linear(Tape& t, const ParameterStore& store, const std::string& name, VarId x);

// Two-layer MLP with ReLU hidden activation: `name.l0`, `name.l1`.
void init_mlp2(ParameterStore& store, Rng& rng, const std::string& name, int in, int hidden,
               int out, bool zero_last = false);
VarId mlp2(Tape& t, const ParameterStore& store, const std::string& name, VarId x);

// Scaled dot-product multi-head cross attention. Queries (m x width) attend
// to keys/values (n x width); output has query shape. Dropout is applied to
// the attention weights at training time only.
void init_attention(ParameterStore& store, Rng& rng, const std::string& name, int width);
VarId cross_attention(Tape& t, const ParameterStore& store, const std::string& name, VarId queries,
                      VarId keys_values, int n_heads, double dropout_p = 0.0, bool train = false);

// Standard GRU cell; hidden (1 x H), input (1 x I).
void init_gru(ParameterStore& store, Rng& rng, const std::string& name, int input, int hidden);
VarId gru_step(Tape& t, const ParameterStore& store, const std::string& name, VarId hidden,
               VarId input);

// Mean over coordinates of log(2b) + |target - mu| / b. Scales must be
// strictly positive.
VarId laplace_nll(Tape& t, VarId mu, VarId b, VarId target);

// ---------------------------------------------------------------- optimizer

// In-place AdamW with bias correction and decoupled weight decay. Every grad
// entry must name an existing parameter of the same shape. Parameters whose
// name starts with `skip_prefix` are left untouched (empty = update all).
void adamw_step(ParameterStore& store, const GradList& grads, double lr, double weight_decay,
                const std::string& skip_prefix = "");

// Cosine schedule: lr0 * 0.5 * (1 + cos(pi * step / total_steps)).
double cosine_lr(int64_t step, int64_t total_steps, double lr0);

// --------------------------------------------------------------- checkpoint

// Single-file format: 8-byte magic, u64 little-endian header length, JSON
// header {dtype, meta{step,epoch}, tensors{name -> {shape, offset}}}, then
// raw little-endian f64 buffers. Adam moments are stored under "opt.m/" and
// "opt.v/" prefixes.
void save_checkpoint(const ParameterStore& store, const std::string& path, int64_t epoch = 0);
ParameterStore load_checkpoint(const std::string& path, int64_t* epoch_out = nullptr);

}  // namespace traj
