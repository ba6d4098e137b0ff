#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "traj/rng.hpp"
#include "traj/tensor.hpp"

namespace traj {

// Reverse-mode autodiff tape. One tape per forward pass; tapes are
// independent, so scenarios can run on separate threads against a shared
// read-only ParameterStore. Every op validates shapes and rejects
// non-finite outputs.
class Tape {
 public:
  using VarId = int32_t;

  // grad=false builds a value-only tape (inference); backward() is then
  // unavailable but forwards are cheaper.
  explicit Tape(bool grad = true, uint64_t dropout_seed = 0)
      : grad_enabled_(grad), rng_(dropout_seed) {}

  bool grad_enabled() const { return grad_enabled_; }

  // Leaves -----------------------------------------------------------
  VarId input(Mat m);                                   // constant, no grad
  VarId scalar_input(double v) { return input(Mat::scalar(v)); }
  VarId param(const std::string& name, const Mat* values);  // differentiable leaf

  const Mat& val(VarId id) const { return nodes_[id].view ? *nodes_[id].view : nodes_[id].owned; }
  const Mat& grad(VarId id) const;
  double scalar(VarId id) const;

  // Elementwise ------------------------------------------------------
  VarId add(VarId a, VarId b);
  VarId sub(VarId a, VarId b);
  VarId mul(VarId a, VarId b);
  VarId div(VarId a, VarId b);
  VarId scale(VarId a, double s);
  VarId add_const(VarId a, double c);
  VarId relu(VarId a);
  VarId clamp_min(VarId a, double floor);
  VarId sigmoid(VarId a);
  VarId tanh_op(VarId a);
  VarId softplus(VarId a);
  VarId exp_op(VarId a);
  VarId log_op(VarId a);
  VarId abs_op(VarId a);
  VarId sin_op(VarId a);
  VarId cos_op(VarId a);
  VarId atan2_op(VarId y, VarId x);

  // Linear algebra ----------------------------------------------------
  VarId matmul(VarId a, VarId b);     // a(m,k) @ b(k,n)
  VarId matmul_nt(VarId a, VarId b);  // a(m,k) @ b(n,k)^T
  VarId add_row(VarId a, VarId bias);  // broadcast 1xC over rows
  VarId row_norm(VarId a);             // (n,2) -> (n,1) Euclidean norms
  VarId softmax_rows(VarId a);
  VarId sum_all(VarId a);   // -> 1x1
  VarId mean_all(VarId a);  // -> 1x1

  // Structure ----------------------------------------------------------
  VarId slice_rows(VarId a, int r0, int r1);
  VarId slice_cols(VarId a, int c0, int c1);
  VarId concat_rows(const std::vector<VarId>& parts);
  VarId concat_cols(const std::vector<VarId>& parts);
  VarId reshape(VarId a, int rows, int cols);

  // Regularization ------------------------------------------------------
  // Inverted dropout with a mask drawn from the tape's seeded stream.
  // Identity when train=false or p=0.
  VarId dropout(VarId a, double p, bool train);

  // Backward -----------------------------------------------------------
  void backward(VarId loss);  // loss must be 1x1

  // Accumulate parameter gradients (in registration order) into `out`,
  // creating zero entries as needed. Only meaningful after backward().
  void accumulate_param_grads(std::vector<std::pair<std::string, Mat>>& out) const;

  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Mat owned;
    const Mat* view = nullptr;  // set for params (values live in the store)
    Mat grad;
    bool requires_grad = false;
    std::function<void(Tape&)> back;
  };

  VarId push(Mat val, bool requires_grad, std::function<void(Tape&)> back);
  Mat& grad_buf(VarId id);
  bool rg(VarId id) const { return grad_enabled_ && nodes_[id].requires_grad; }
  void check_finite(VarId id, const char* op) const;

  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, VarId>> params_;
  std::unordered_map<std::string, VarId> param_cache_;
  bool grad_enabled_;
  Rng rng_;
};

using VarId = Tape::VarId;

}  // namespace traj
