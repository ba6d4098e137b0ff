#include "traj/graph.hpp"

#include <algorithm>
#include <cmath>

namespace traj {

namespace {
constexpr double kNormFloor = 1e-12;  // below this, norm/atan2 get zero grad
}

VarId Tape::push(Mat val, bool requires_grad, std::function<void(Tape&)> back) {
  Node n;
  n.owned = std::move(val);
  n.requires_grad = grad_enabled_ && requires_grad;
  if (n.requires_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<VarId>(nodes_.size() - 1);
}

Mat& Tape::grad_buf(VarId id) {
  Node& n = nodes_[id];
  const Mat& v = n.view ? *n.view : n.owned;
  if (n.grad.rows != v.rows || n.grad.cols != v.cols) n.grad = Mat(v.rows, v.cols);
  return n.grad;
}

const Mat& Tape::grad(VarId id) const {
  const Node& n = nodes_[id];
  if (n.grad.size() == 0) {
    throw std::logic_error("gradient not computed for this variable");
  }
  return n.grad;
}

double Tape::scalar(VarId id) const {
  const Mat& v = val(id);
  if (v.size() != 1) throw std::invalid_argument("scalar() on non-1x1 value " + shape_str(v));
  return v.d[0];
}

void Tape::check_finite(VarId id, const char* op) const {
  if (!val(id).all_finite()) {
    throw std::runtime_error(std::string(op) + " produced a non-finite value");
  }
}

VarId Tape::input(Mat m) {
  if (!m.all_finite()) throw std::invalid_argument("input tensor has non-finite values");
  return push(std::move(m), false, {});
}

VarId Tape::param(const std::string& name, const Mat* values) {
  auto it = param_cache_.find(name);
  if (it != param_cache_.end()) return it->second;
  if (!values->all_finite()) {
    throw std::runtime_error("parameter '" + name + "' has non-finite values");
  }
  Node n;
  n.view = values;
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  VarId id = static_cast<VarId>(nodes_.size() - 1);
  if (grad_enabled_) params_.emplace_back(name, id);
  param_cache_.emplace(name, id);
  return id;
}

// ---------------------------------------------------------------- elementwise

VarId Tape::add(VarId a, VarId b) {
  const Mat &va = val(a), &vb = val(b);
  check_same_shape(va, vb, "add");
  Mat out(va.rows, va.cols);
  for (int i = 0; i < out.size(); ++i) out.d[i] = va.d[i] + vb.d[i];
  VarId id = push(std::move(out), rg(a) || rg(b), {});
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [a, b, id](Tape& t) {
      const Mat& g = t.grad_buf(id);
      if (t.rg(a)) {
        Mat& ga = t.grad_buf(a);
        for (int i = 0; i < g.size(); ++i) ga.d[i] += g.d[i];
      }
      if (t.rg(b)) {
        Mat& gb = t.grad_buf(b);
        for (int i = 0; i < g.size(); ++i) gb.d[i] += g.d[i];
      }
    };
  }
  check_finite(id, "add");
  return id;
}

VarId Tape::sub(VarId a, VarId b) {
  const Mat &va = val(a), &vb = val(b);
  check_same_shape(va, vb, "sub");
  Mat out(va.rows, va.cols);
  for (int i = 0; i < out.size(); ++i) out.d[i] = va.d[i] - vb.d[i];
  VarId id = push(std::move(out), rg(a) || rg(b), {});
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [a, b, id](Tape& t) {
      const Mat& g = t.grad_buf(id);
      if (t.rg(a)) {
        Mat& ga = t.grad_buf(a);
        for (int i = 0; i < g.size(); ++i) ga.d[i] += g.d[i];
      }
      if (t.rg(b)) {
        Mat& gb = t.grad_buf(b);
        for (int i = 0; i < g.size(); ++i) gb.d[i] -= g.d[i];
      }
    };
  }
  check_finite(id, "sub");
  return id;
}

VarId Tape::mul(VarId a, VarId b) {
  const Mat &va = val(a), &vb = val(b);
  check_same_shape(va, vb, "mul");
  Mat out(va.rows, va.cols);
  for (int i = 0; i < out.size(); ++i) out.d[i] = va.d[i] * vb.d[i];
  VarId id = push(std::move(out), rg(a) || rg(b), {});
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [a, b, id](Tape& t) {
      const Mat& g = t.grad_buf(id);
      const Mat &va2 = t.val(a), &vb2 = t.val(b);
      if (t.rg(a)) {
        Mat& ga = t.grad_buf(a);
        for (int i = 0; i < g.size(); ++i) ga.d[i] += g.d[i] * vb2.d[i];
      }
      if (t.rg(b)) {
        Mat& gb = t.grad_buf(b);
        for (int i = 0; i < g.size(); ++i) gb.d[i] += g.d[i] * va2.d[i];
      }
    };
  }
  check_finite(id, "mul");
  return id;
}

VarId Tape::div(VarId a, VarId b) {
  const Mat &va = val(a), &vb = val(b);
  check_same_shape(va, vb, "div");
  Mat out(va.rows, va.cols);
  for (int i = 0; i < out.size(); ++i) out.d[i] = va.d[i] / vb.d[i];
  VarId id = push(std::move(out), rg(a) || rg(b), {});
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [a, b, id](Tape& t) {
      const Mat& g = t.grad_buf(id);
      const Mat &va2 = t.val(a), &vb2 = t.val(b);
      if (t.rg(a)) {
        Mat& ga = t.grad_buf(a);
        for (int i = 0; i < g.size(); ++i) ga.d[i] += g.d[i] / vb2.d[i];
      }
      if (t.rg(b)) {
        Mat& gb = t.grad_buf(b);
        for (int i = 0; i < g.size(); ++i) {
          gb.d[i] -= g.d[i] * va2.d[i] / (vb2.d[i] * vb2.d[i]);
        }
      }
    };
  }
  check_finite(id, "div");
  return id;
}

VarId Tape::scale(VarId a, double s) {
  const Mat& va = val(a);
  Mat out(va.rows, va.cols);
  for (int i = 0; i < out.size(); ++i) out.d[i] = s * va.d[i];
  VarId id = push(std::move(out), rg(a), {});
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [a, s, id](Tape& t) {
      const Mat& g = t.grad_buf(id);
      Mat& ga = t.grad_buf(a);
      for (int i = 0; i < g.size(); ++i) ga.d[i] += s * g.d[i];
    };
  }
  check_finite(id, "scale");
  return id;
}

VarId Tape::add_const(VarId a, double c) {
  const Mat& va = val(a);
  Mat out(va.rows, va.cols);
  for (int i = 0; i < out.size(); ++i) out.d[i] = va.d[i] + c;
  VarId id = push(std::move(out), rg(a), {});
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [a, id](Tape& t) {
      const Mat& g = t.grad_buf(id);
      Mat& ga = t.grad_buf(a);
      for (int i = 0; i < g.size(); ++i) ga.d[i] += g.d[i];
    };
  }
  check_finite(id, "add_const");
  return id;
}

namespace {
double sigmoid_stable(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

VarId Tape::relu(VarId a) {
  const Mat& va = val(a);
  Mat out(va.rows, va.cols);
  for (int i = 0; i < out.size(); ++i) out.d[i] = va.d[i] > 0.0 ? va.d[i] : 0.0;
  VarId id = push(std::move(out), rg(a), {});
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [a, id](Tape& t) {
      const Mat& g = t.grad_buf(id);
      const Mat& va2 = t.val(a);
      Mat& ga = t.grad_buf(a);
      for (int i = 0; i < g.size(); ++i) {
        if (va2.d[i] > 0.0) ga.d[i] += g.d[i];
      }
    };
  }
  check_finite(id, "relu");
  return id;
}

VarId Tape::clamp_min(VarId a, double floor) {
  const Mat& va = val(a);
  Mat out(va.rows, va.cols);
  for (int i = 0; i < out.size(); ++i) out.d[i] = va.d[i] < floor ? floor : va.d[i];
  VarId id = push(std::move(out), rg(a), {});
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [a, floor, id](Tape& t) {
      const Mat& g = t.grad_buf(id);
      const Mat& va2 = t.val(a);
      Mat& ga = t.grad_buf(a);
      for (int i = 0; i < g.size(); ++i) {
        if (va2.d[i] >= floor) ga.d[i] += g.d[i];
      }
    };
  }
  check_finite(id, "clamp_min");
  return id;
}

VarId Tape::sigmoid(VarId a) {
  const Mat& va = val(a);
  Mat out(va.rows, va.cols);
  for (int i = 0; i < out.size(); ++i) out.d[i] = sigmoid_stable(va.d[i]);
  VarId id = push(std::move(out), rg(a), {});
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [a, id](Tape& t) {
      const Mat& g = t.grad_buf(id);
      const Mat& y = t.val(id);
      Mat& ga = t.grad_buf(a);
      for (int i = 0; i < g.size(); ++i) ga.d[i] += g.d[i] * y.d[i] * (1.0 - y.d[i]);
    };
  }
  check_finite(id, "sigmoid");
  return id;
}

VarId Tape::tanh_op(VarId a) {
  const Mat& va = val(a);
  Mat out(va.rows, va.cols);
  for (int i = 0; i < out.size(); ++i) out.d[i] = std::tanh(va.d[i]);
  VarId id = push(std::move(out), rg(a), {});
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [a, id](Tape& t) {
      const Mat& g = t.grad_buf(id);
      const Mat& y = t.val(id);
      Mat& ga = t.grad_buf(a);
      for (int i = 0; i < g.size(); ++i) ga.d[i] += g.d[i] * (1.0 - y.d[i] * y.d[i]);
    };
  }
  check_finite(id, "tanh");
  return id;
}

VarId Tape::softplus(VarId a) {
  const Mat& va = val(a);
  Mat out(va.rows, va.cols);
  for (int i = 0; i < out.size(); ++i) {
    const double x = va.d[i];
    out.d[i] = x > 30.0 ? x : std::log1p(std::exp(x));
  }
  VarId id = push(std::move(out), rg(a), {});
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [a, id](Tape& t) {
      const Mat& g = t.grad_buf(id);
      const Mat& va2 = t.val(a);
      Mat& ga = t.grad_buf(a);
      for (int i = 0; i < g.size(); ++i) ga.d[i] += g.d[i] * sigmoid_stable(va2.d[i]);
    };
  }
  check_finite(id, "softplus");
  return id;
}

VarId Tape::exp_op(VarId a) {
  const Mat& va = val(a);
  Mat out(va.rows, va.cols);
  for (int i = 0; i < out.size(); ++i) out.d[i] = std::exp(va.d[i]);
  VarId id = push(std::move(out), rg(a), {});
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [a, id](Tape& t) {
      const Mat& g = t.grad_buf(id);
      const Mat& y = t.val(id);
      Mat& ga = t.grad_buf(a);
      for (int i = 0; i < g.size(); ++i) ga.d[i] += g.d[i] * y.d[i];
    };
  }
  check_finite(id, "exp");
  return id;
}

VarId Tape::log_op(VarId a) {
  const Mat& va = val(a);
  Mat out(va.rows, va.cols);
  for (int i = 0; i < out.size(); ++i) {
    if (va.d[i] <= 0.0) throw std::invalid_argument("log of non-positive value");
    out.d[i] = std::log(va.d[i]);
  }
  VarId id = push(std::move(out), rg(a), {});
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [a, id](Tape& t) {
      const Mat& g = t.grad_buf(id);
      const Mat& va2 = t.val(a);
      Mat& ga = t.grad_buf(a);
      for (int i = 0; i < g.size(); ++i) ga.d[i] += g.d[i] / va2.d[i];
    };
  }
  check_finite(id, "log");
  return id;
}

VarId Tape::abs_op(VarId a) {
  const Mat& va = val(a);
  Mat out(va.rows, va.cols);
  for (int i = 0; i < out.size(); ++i) out.d[i] = std::fabs(va.d[i]);
  VarId id = push(std::move(out), rg(a), {});
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [a, id](Tape& t) {
      const Mat& g = t.grad_buf(id);
      const Mat& va2 = t.val(a);
      Mat& ga = t.grad_buf(a);
      for (int i = 0; i < g.size(); ++i) {
        if (va2.d[i] > 0.0) {
          ga.d[i] += g.d[i];
        } else if (va2.d[i] < 0.0) {
          ga.d[i] -= g.d[i];
        }
      }
    };
  }
  check_finite(id, "abs");
  return id;
}

VarId Tape::sin_op(VarId a) {
  const Mat& va = val(a);
  Mat out(va.rows, va.cols);
  for (int i = 0; i < out.size(); ++i) out.d[i] = std::sin(va.d[i]);
  VarId id = push(std::move(out), rg(a), {});
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [a, id](Tape& t) {
      const Mat& g = t.grad_buf(id);
      const Mat& va2 = t.val(a);
      Mat& ga = t.grad_buf(a);
      for (int i = 0; i < g.size(); ++i) ga.d[i] += g.d[i] * std::cos(va2.d[i]);
    };
  }
  check_finite(id, "sin");
  return id;
}

VarId Tape::cos_op(VarId a) {
  const Mat& va = val(a);
  Mat out(va.rows, va.cols);
  for (int i = 0; i < out.size(); ++i) out.d[i] = std::cos(va.d[i]);
  VarId id = push(std::move(out), rg(a), {});
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [a, id](Tape& t) {
      const Mat& g = t.grad_buf(id);
      const Mat& va2 = t.val(a);
      Mat& ga = t.grad_buf(a);
      for (int i = 0; i < g.size(); ++i) ga.d[i] -= g.d[i] * std::sin(va2.d[i]);
    };
  }
  check_finite(id, "cos");
  return id;
}

VarId Tape::atan2_op(VarId y, VarId x) {
  const Mat &vy = val(y), &vx = val(x);
  check_same_shape(vy, vx, "atan2");
  Mat out(vy.rows, vy.cols);
  for (int i = 0; i < out.size(); ++i) out.d[i] = std::atan2(vy.d[i], vx.d[i]);
  VarId id = push(std::move(out), rg(y) || rg(x), {});
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [y, x, id](Tape& t) {
      const Mat& g = t.grad_buf(id);
      const Mat &vy2 = t.val(y), &vx2 = t.val(x);
      for (int i = 0; i < g.size(); ++i) {
        const double r2 = vx2.d[i] * vx2.d[i] + vy2.d[i] * vy2.d[i];
        if (r2 < kNormFloor) continue;  // undefined at the origin
        if (t.rg(y)) t.grad_buf(y).d[i] += g.d[i] * vx2.d[i] / r2;
        if (t.rg(x)) t.grad_buf(x).d[i] -= g.d[i] * vy2.d[i] / r2;
      }
    };
  }
  check_finite(id, "atan2");
  return id;
}

// ------------------------------------------------------------- linear algebra

VarId Tape::matmul(VarId a, VarId b) {
  const Mat &va = val(a), &vb = val(b);
  if (va.cols != vb.rows) {
    throw std::invalid_argument("matmul: shape mismatch, expected inner dim " +
                                std::to_string(va.cols) + ", actual " + std::to_string(vb.rows));
  }
  const int m = va.rows, k = va.cols, n = vb.cols;
  Mat out(m, n);
  for (int i = 0; i < m; ++i) {
    const double* arow = va.row(i);
    double* orow = out.row(i);
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = vb.row(p);
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  VarId id = push(std::move(out), rg(a) || rg(b), {});
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [a, b, id, m, k, n](Tape& t) {
      const Mat& g = t.grad_buf(id);
      const Mat &va2 = t.val(a), &vb2 = t.val(b);
      if (t.rg(a)) {  // dA = G @ B^T
        Mat& ga = t.grad_buf(a);
        for (int i = 0; i < m; ++i) {
          const double* grow = g.row(i);
          double* garow = ga.row(i);
          for (int p = 0; p < k; ++p) {
            const double* brow = vb2.row(p);
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
            garow[p] += acc;
          }
        }
      }
      if (t.rg(b)) {  // dB = A^T @ G
        Mat& gb = t.grad_buf(b);
        for (int i = 0; i < m; ++i) {
          const double* arow = va2.row(i);
          const double* grow = g.row(i);
          for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* gbrow = gb.row(p);
            for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
    };
  }
  check_finite(id, "matmul");
  return id;
}

VarId Tape::matmul_nt(VarId a, VarId b) {
  const Mat &va = val(a), &vb = val(b);
  if (va.cols != vb.cols) {
    throw std::invalid_argument("matmul_nt: shape mismatch, expected inner dim " +
                                std::to_string(va.cols) + ", actual " + std::to_string(vb.cols));
  }
  const int m = va.rows, k = va.cols, n = vb.rows;
  Mat out(m, n);
  for (int i = 0; i < m; ++i) {
    const double* arow = va.row(i);
    double* orow = out.row(i);
    for (int j = 0; j < n; ++j) {
      const double* brow = vb.row(j);
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      orow[j] = acc;
    }
  }
  VarId id = push(std::move(out), rg(a) || rg(b), {});
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [a, b, id, m, k, n](Tape& t) {
      const Mat& g = t.grad_buf(id);
      const Mat &va2 = t.val(a), &vb2 = t.val(b);
      if (t.rg(a)) {  // dA = G @ B
        Mat& ga = t.grad_buf(a);
        for (int i = 0; i < m; ++i) {
          const double* grow = g.row(i);
          double* garow = ga.row(i);
          for (int j = 0; j < n; ++j) {
            const double gv = grow[j];
            if (gv == 0.0) continue;
            const double* brow = vb2.row(j);
            for (int p = 0; p < k; ++p) garow[p] += gv * brow[p];
          }
        }
      }
      if (t.rg(b)) {  // dB = G^T @ A
        Mat& gb = t.grad_buf(b);
        for (int i = 0; i < m; ++i) {
          const double* grow = g.row(i);
          const double* arow = va2.row(i);
          for (int j = 0; j < n; ++j) {
            const double gv = grow[j];
            if (gv == 0.0) continue;
            double* gbrow = gb.row(j);
            for (int p = 0; p < k; ++p) gbrow[p] += gv * arow[p];
          }
        }
      }
    };
  }
  check_finite(id, "matmul_nt");
  return id;
}

VarId Tape::add_row(VarId a, VarId bias) {
  const Mat &va = val(a), &vb = val(bias);
  if (vb.rows != 1 || vb.cols != va.cols) {
    throw std::invalid_argument("add_row: shape mismatch, expected (1x" +
                                std::to_string(va.cols) + "), actual " + shape_str(vb));
  }
  Mat out(va.rows, va.cols);
  for (int i = 0; i < va.rows; ++i) {
    const double* arow = va.row(i);
    double* orow = out.row(i);
    for (int j = 0; j < va.cols; ++j) orow[j] = arow[j] + vb.d[j];
  }
  VarId id = push(std::move(out), rg(a) || rg(bias), {});
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [a, bias, id](Tape& t) {
      const Mat& g = t.grad_buf(id);
      if (t.rg(a)) {
        Mat& ga = t.grad_buf(a);
        for (int i = 0; i < g.size(); ++i) ga.d[i] += g.d[i];
      }
      if (t.rg(bias)) {
        Mat& gb = t.grad_buf(bias);
        for (int i = 0; i < g.rows; ++i) {
          const double* grow = g.row(i);
          for (int j = 0; j < g.cols; ++j) gb.d[j] += grow[j];
        }
      }
    };
  }
  check_finite(id, "add_row");
  return id;
}

VarId Tape::row_norm(VarId a) {
  const Mat& va = val(a);
  Mat out(va.rows, 1);
  for (int i = 0; i < va.rows; ++i) {
    const double* r = va.row(i);
    double acc = 0.0;
    for (int j = 0; j < va.cols; ++j) acc += r[j] * r[j];
    out.d[i] = std::sqrt(acc);
  }
  VarId id = push(std::move(out), rg(a), {});
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [a, id](Tape& t) {
      const Mat& g = t.grad_buf(id);
      const Mat& va2 = t.val(a);
      const Mat& y = t.val(id);
      Mat& ga = t.grad_buf(a);
      for (int i = 0; i < va2.rows; ++i) {
        if (y.d[i] < kNormFloor) continue;  // zero subgradient at the origin
        const double s = g.d[i] / y.d[i];
        const double* r = va2.row(i);
        double* gr = ga.row(i);
        for (int j = 0; j < va2.cols; ++j) gr[j] += s * r[j];
      }
    };
  }
  check_finite(id, "row_norm");
  return id;
}

VarId Tape::softmax_rows(VarId a) {
  const Mat& va = val(a);
  Mat out(va.rows, va.cols);
  for (int i = 0; i < va.rows; ++i) {
    const double* r = va.row(i);
    double* o = out.row(i);
    double mx = r[0];
    for (int j = 1; j < va.cols; ++j) mx = std::max(mx, r[j]);
    double sum = 0.0;
    for (int j = 0; j < va.cols; ++j) {
      o[j] = std::exp(r[j] - mx);
      sum += o[j];
    }
    for (int j = 0; j < va.cols; ++j) o[j] /= sum;
  }
  VarId id = push(std::move(out), rg(a), {});
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [a, id](Tape& t) {
      const Mat& g = t.grad_buf(id);
      const Mat& y = t.val(id);
      Mat& ga = t.grad_buf(a);
      for (int i = 0; i < y.rows; ++i) {
        const double* grow = g.row(i);
        const double* yrow = y.row(i);
        double* garow = ga.row(i);
        double dotgy = 0.0;
        for (int j = 0; j < y.cols; ++j) dotgy += grow[j] * yrow[j];
        for (int j = 0; j < y.cols; ++j) garow[j] += yrow[j] * (grow[j] - dotgy);
      }
    };
  }
  check_finite(id, "softmax");
  return id;
}

VarId Tape::sum_all(VarId a) {
  const Mat& va = val(a);
  double acc = 0.0;
  for (double v : va.d) acc += v;
  VarId id = push(Mat::scalar(acc), rg(a), {});
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [a, id](Tape& t) {
      const double g = t.grad_buf(id).d[0];
      Mat& ga = t.grad_buf(a);
      for (int i = 0; i < ga.size(); ++i) ga.d[i] += g;
    };
  }
  check_finite(id, "sum_all");
  return id;
}

VarId Tape::mean_all(VarId a) {
  const Mat& va = val(a);
  if (va.size() == 0) throw std::invalid_argument("mean of empty tensor");
  double acc = 0.0;
  for (double v : va.d) acc += v;
  const double inv = 1.0 / va.size();
  VarId id = push(Mat::scalar(acc * inv), rg(a), {});
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [a, id, inv](Tape& t) {
      const double g = t.grad_buf(id).d[0] * inv;
      Mat& ga = t.grad_buf(a);
      for (int i = 0; i < ga.size(); ++i) ga.d[i] += g;
    };
  }
  check_finite(id, "mean_all");
  return id;
}

// ------------------------------------------------------------------ structure

VarId Tape::slice_rows(VarId a, int r0, int r1) {
  const Mat& va = val(a);
  if (r0 < 0 || r1 > va.rows || r0 >= r1) {
    throw std::invalid_argument("slice_rows: bad range [" + std::to_string(r0) + "," +
                                std::to_string(r1) + ") for " + shape_str(va));
  }
  Mat out(r1 - r0, va.cols);
  std::copy(va.row(r0), va.row(r0) + out.size(), out.d.begin());
  VarId id = push(std::move(out), rg(a), {});
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [a, id, r0](Tape& t) {
      const Mat& g = t.grad_buf(id);
      Mat& ga = t.grad_buf(a);
      double* dst = ga.row(r0);
      for (int i = 0; i < g.size(); ++i) dst[i] += g.d[i];
    };
  }
  return id;
}

VarId Tape::slice_cols(VarId a, int c0, int c1) {
  const Mat& va = val(a);
  if (c0 < 0 || c1 > va.cols || c0 >= c1) {
    throw std::invalid_argument("slice_cols: bad range [" + std::to_string(c0) + "," +
                                std::to_string(c1) + ") for " + shape_str(va));
  }
  Mat out(va.rows, c1 - c0);
  for (int i = 0; i < va.rows; ++i) {
    std::copy(va.row(i) + c0, va.row(i) + c1, out.row(i));
  }
  VarId id = push(std::move(out), rg(a), {});
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [a, id, c0](Tape& t) {
      const Mat& g = t.grad_buf(id);
      Mat& ga = t.grad_buf(a);
      for (int i = 0; i < g.rows; ++i) {
        const double* grow = g.row(i);
        double* garow = ga.row(i) + c0;
        for (int j = 0; j < g.cols; ++j) garow[j] += grow[j];
      }
    };
  }
  return id;
}

VarId Tape::concat_rows(const std::vector<VarId>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows of nothing");
  const int cols = val(parts[0]).cols;
  int rows = 0;
  bool needs_grad = false;
  for (VarId p : parts) {
    if (val(p).cols != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += val(p).rows;
    needs_grad = needs_grad || rg(p);
  }
  Mat out(rows, cols);
  int r = 0;
  for (VarId p : parts) {
    const Mat& vp = val(p);
    std::copy(vp.d.begin(), vp.d.end(), out.row(r));
    r += vp.rows;
  }
  VarId id = push(std::move(out), needs_grad, {});
  if (nodes_[id].requires_grad) {
    std::vector<VarId> ps = parts;
    nodes_[id].back = [ps, id](Tape& t) {
      const Mat& g = t.grad_buf(id);
      int row = 0;
      for (VarId p : ps) {
        const int pr = t.val(p).rows;
        if (t.rg(p)) {
          Mat& gp = t.grad_buf(p);
          const double* src = g.row(row);
          for (int i = 0; i < gp.size(); ++i) gp.d[i] += src[i];
        }
        row += pr;
      }
    };
  }
  return id;
}

VarId Tape::concat_cols(const std::vector<VarId>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols of nothing");
  const int rows = val(parts[0]).rows;
  int cols = 0;
  bool needs_grad = false;
  for (VarId p : parts) {
    if (val(p).rows != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += val(p).cols;
    needs_grad = needs_grad || rg(p);
  }
  Mat out(rows, cols);
  int c = 0;
  for (VarId p : parts) {
    const Mat& vp = val(p);
    for (int i = 0; i < rows; ++i) std::copy(vp.row(i), vp.row(i) + vp.cols, out.row(i) + c);
    c += vp.cols;
  }
  VarId id = push(std::move(out), needs_grad, {});
  if (nodes_[id].requires_grad) {
    std::vector<VarId> ps = parts;
    nodes_[id].back = [ps, id](Tape& t) {
      const Mat& g = t.grad_buf(id);
      int col = 0;
      for (VarId p : ps) {
        const int pc = t.val(p).cols;
        if (t.rg(p)) {
          Mat& gp = t.grad_buf(p);
          for (int i = 0; i < g.rows; ++i) {
            const double* grow = g.row(i) + col;
            double* gprow = gp.row(i);
            for (int j = 0; j < pc; ++j) gprow[j] += grow[j];
          }
        }
        col += pc;
      }
    };
  }
  return id;
}

VarId Tape::reshape(VarId a, int rows, int cols) {
  const Mat& va = val(a);
  if (rows * cols != va.size()) {
    throw std::invalid_argument("reshape: size mismatch, expected " + std::to_string(va.size()) +
                                " elements, actual " + std::to_string(rows * cols));
  }
  Mat out(rows, cols, va.d);
  VarId id = push(std::move(out), rg(a), {});
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [a, id](Tape& t) {
      const Mat& g = t.grad_buf(id);
      Mat& ga = t.grad_buf(a);
      for (int i = 0; i < g.size(); ++i) ga.d[i] += g.d[i];
    };
  }
  return id;
}

VarId Tape::dropout(VarId a, double p, bool train) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout probability out of [0,1)");
  if (!train || p == 0.0) return a;
  const Mat& va = val(a);
  Mat mask(va.rows, va.cols);
  const double keep_scale = 1.0 / (1.0 - p);
  for (int i = 0; i < mask.size(); ++i) mask.d[i] = rng_.uniform() < p ? 0.0 : keep_scale;
  Mat out(va.rows, va.cols);
  for (int i = 0; i < out.size(); ++i) out.d[i] = va.d[i] * mask.d[i];
  VarId id = push(std::move(out), rg(a), {});
  if (nodes_[id].requires_grad) {
    auto m = std::make_shared<Mat>(std::move(mask));
    nodes_[id].back = [a, id, m](Tape& t) {
      const Mat& g = t.grad_buf(id);
      Mat& ga = t.grad_buf(a);
      for (int i = 0; i < g.size(); ++i) ga.d[i] += g.d[i] * m->d[i];
    };
  }
  check_finite(id, "dropout");
  return id;
}

// ------------------------------------------------------------------- backward

void Tape::backward(VarId loss) {
  if (!grad_enabled_) throw std::logic_error("backward() on a no-grad tape");
  if (val(loss).size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(val(loss)));
  }
  grad_buf(loss).d[0] = 1.0;
  for (VarId id = loss; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.requires_grad && n.back && n.grad.size() > 0) n.back(*this);
  }
}

void Tape::accumulate_param_grads(std::vector<std::pair<std::string, Mat>>& out) const {
  for (const auto& [name, id] : params_) {
    const Node& n = nodes_[id];
    const Mat& v = *n.view;
    Mat g = n.grad.size() > 0 ? n.grad : Mat(v.rows, v.cols);
    bool found = false;
    for (auto& [oname, og] : out) {
      if (oname == name) {
        for (int i = 0; i < g.size(); ++i) og.d[i] += g.d[i];
        found = true;
        break;
      }
    }
    if (!found) out.emplace_back(name, std::move(g));
  }
}

}  // namespace traj
