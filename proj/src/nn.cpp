#include "traj/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace traj {

Mat& ParameterStore::create(const std::string& name, int rows, int cols) {
  if (params_.count(name)) throw std::invalid_argument("parameter '" + name + "' already exists");
  auto [it, ok] = params_.emplace(name, Mat(rows, cols));
  m_.emplace(name, Mat(rows, cols));
  v_.emplace(name, Mat(rows, cols));
  return it->second;
}

const Mat& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::invalid_argument("unknown parameter '" + name + "'");
  return it->second;
}

Mat& ParameterStore::get_mutable(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::invalid_argument("unknown parameter '" + name + "'");
  return it->second;
}

// -------------------------------------------------------------------- layers

void init_linear(ParameterStore& store, Rng& rng, const std::string& name, int in, int out,
                 bool zero) {
  Mat& w = store.create(name + ".w", in, out);
  store.create(name + ".b", 1, out);
  if (!zero) {
    const double bound = std::sqrt(6.0 / (in + out));
    for (double& v : w.d) v = rng.uniform(-bound, bound);
  }
}

VarId linear(Tape& t, const ParameterStore& store, const std::string& name, VarId x) {
  const Mat& w = store.get(name + ".w");
  if (t.val(x).cols != w.rows) {
    throw std::invalid_argument("linear '" + name + "': input width mismatch, expected " +
                                std::to_string(w.rows) + ", actual " +
                                std::to_string(t.val(x).cols));
  }
  VarId wv = t.param(name + ".w", &w);
  VarId bv = t.param(name + ".b", &store.get(name + ".b"));
  return t.add_row(t.matmul(x, wv), bv);
}

void init_mlp2(ParameterStore& store, Rng& rng, const std::string& name, int in, int hidden,
               int out, bool zero_last) {
  init_linear(store, rng, name + ".l0", in, hidden);
  init_linear(store, rng, name + ".l1", hidden, out, zero_last);
}

VarId mlp2(Tape& t, const ParameterStore& store, const std::string& name, VarId x) {
  return linear(t, store, name + ".l1", t.relu(linear(t, store, name + ".l0", x)));
}

void init_attention(ParameterStore& store, Rng& rng, const std::string& name, int width) {
  init_linear(store, rng, name + ".q", width, width);
  init_linear(store, rng, name + ".k", width, width);
  init_linear(store, rng, name + ".v", width, width);
  init_linear(store, rng, name + ".o", width, width);
}

VarId cross_attention(Tape& t, const ParameterStore& store, const std::string& name, VarId queries,
                      VarId keys_values, int n_heads, double dropout_p, bool train) {
  const int width = t.val(queries).cols;
  if (width % n_heads != 0) {
    throw std::invalid_argument("attention width " + std::to_string(width) +
                                " not divisible by " + std::to_string(n_heads) + " heads");
  }
  if (t.val(keys_values).rows == 0) {
    throw std::invalid_argument("attention over an empty key set");
  }
  const int dh = width / n_heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  VarId q = linear(t, store, name + ".q", queries);
  VarId k = linear(t, store, name + ".k", keys_values);
  VarId v = linear(t, store, name + ".v", keys_values);

  std::vector<VarId> head_outs;
  head_outs.reserve(n_heads);
  for (int h = 0; h < n_heads; ++h) {
    VarId qh = t.slice_cols(q, h * dh, (h + 1) * dh);
    VarId kh = t.slice_cols(k, h * dh, (h + 1) * dh);
    VarId vh = t.slice_cols(v, h * dh, (h + 1) * dh);
    VarId scores = t.scale(t.matmul_nt(qh, kh), inv_sqrt_dh);
    VarId attn = t.softmax_rows(scores);
    attn = t.dropout(attn, dropout_p, train);
    head_outs.push_back(t.matmul(attn, vh));
  }
  return linear(t, store, name + ".o", t.concat_cols(head_outs));
}

void init_gru(ParameterStore& store, Rng& rng, const std::string& name, int input, int hidden) {
  for (const char* gate : {"r", "z", "n"}) {
    init_linear(store, rng, name + ".i" + gate, input, hidden);
    init_linear(store, rng, name + ".h" + gate, hidden, hidden);
  }
}

VarId gru_step(Tape& t, const ParameterStore& store, const std::string& name, VarId hidden,
               VarId input) {
  VarId r = t.sigmoid(t.add(linear(t, store, name + ".ir", input),
                            linear(t, store, name + ".hr", hidden)));
  VarId z = t.sigmoid(t.add(linear(t, store, name + ".iz", input),
                            linear(t, store, name + ".hz", hidden)));
  VarId n = t.tanh_op(t.add(linear(t, store, name + ".in", input),
                            t.mul(r, linear(t, store, name + ".hn", hidden))));
  // h' = (1 - z) * n + z * h
  VarId one_minus_z = t.add_const(t.scale(z, -1.0), 1.0);
  return t.add(t.mul(one_minus_z, n), t.mul(z, hidden));
}

VarId laplace_nll(Tape& t, VarId mu, VarId b, VarId target) {
  const Mat& bv = t.val(b);
  check_same_shape(t.val(mu), bv, "laplace_nll");
  check_same_shape(t.val(mu), t.val(target), "laplace_nll");
  for (double s : bv.d) {
    if (s <= 0.0) throw std::invalid_argument("laplace_nll: non-positive scale");
  }
  VarId log_term = t.add_const(t.log_op(b), std::log(2.0));
  VarId data_term = t.div(t.abs_op(t.sub(target, mu)), b);
  return t.mean_all(t.add(log_term, data_term));
}

// ----------------------------------------------------------------- optimizer

void adamw_step(ParameterStore& store, const GradList& grads, double lr, double weight_decay,
                const std::string& skip_prefix) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  store.set_step(store.step() + 1);
  const double t = static_cast<double>(store.step());
  const double bc1 = 1.0 - std::pow(beta1, t);
  const double bc2 = 1.0 - std::pow(beta2, t);
  for (const auto& [name, g] : grads) {
    if (!store.has(name)) throw std::invalid_argument("gradient for unknown parameter '" + name + "'");
    Mat& p = store.get_mutable(name);
    check_same_shape(p, g, "adamw_step");
    if (!skip_prefix.empty() && name.rfind(skip_prefix, 0) == 0) continue;
    Mat& m = store.moments_m().at(name);
    Mat& v = store.moments_v().at(name);
    for (int i = 0; i < p.size(); ++i) {
      m.d[i] = beta1 * m.d[i] + (1.0 - beta1) * g.d[i];
      v.d[i] = beta2 * v.d[i] + (1.0 - beta2) * g.d[i] * g.d[i];
      const double mhat = m.d[i] / bc1;
      const double vhat = v.d[i] / bc2;
      p.d[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p.d[i]);
    }
  }
}

double cosine_lr(int64_t step, int64_t total_steps, double lr0) {
  if (total_steps <= 0) throw std::invalid_argument("cosine_lr: total_steps must be positive");
  if (step < 0 || step > total_steps) {
    throw std::invalid_argument("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                                std::to_string(total_steps) + "]");
  }
  return lr0 * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) / total_steps));
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[8] = {'T', 'R', 'C', 'K', 'P', 'T', '0', '1'};

void append_tensors(nlohmann::json& header, const std::string& prefix,
                    const std::map<std::string, Mat>& tensors, uint64_t& offset) {
  for (const auto& [name, m] : tensors) {
    header["tensors"][prefix + name] = {
        {"shape", {m.rows, m.cols}},
        {"offset", offset},
    };
    offset += static_cast<uint64_t>(m.size()) * sizeof(double);
  }
}

void write_raw(std::ofstream& out, const std::map<std::string, Mat>& tensors) {
  for (const auto& [name, m] : tensors) {
    out.write(reinterpret_cast<const char*>(m.d.data()),
              static_cast<std::streamsize>(m.d.size() * sizeof(double)));
  }
}

}  // namespace

void save_checkpoint(const ParameterStore& store, const std::string& path, int64_t epoch) {
  nlohmann::json header;
  header["dtype"] = "f64";
  header["meta"] = {{"step", store.step()}, {"epoch", epoch}};
  header["tensors"] = nlohmann::json::object();
  uint64_t offset = 0;
  append_tensors(header, "", store.params(), offset);
  append_tensors(header, "opt.m/", store.moments_m(), offset);
  append_tensors(header, "opt.v/", store.moments_v(), offset);

  const std::string header_str = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  const uint64_t hlen = header_str.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  write_raw(out, store.params());
  write_raw(out, store.moments_m());
  write_raw(out, store.moments_v());
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

ParameterStore load_checkpoint(const std::string& path, int64_t* epoch_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("not a checkpoint file (bad magic): " + path);
  }
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string header_str(hlen, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw std::runtime_error("truncated checkpoint header: " + path);
  const nlohmann::json header = nlohmann::json::parse(header_str);
  if (header.at("dtype").get<std::string>() != "f64") {
    throw std::runtime_error("unsupported checkpoint dtype");
  }

  const std::streampos data_start = in.tellg();
  ParameterStore store;
  store.set_step(header.at("meta").at("step").get<int64_t>());
  if (epoch_out) *epoch_out = header.at("meta").at("epoch").get<int64_t>();

  for (const auto& [full_name, info] : header.at("tensors").items()) {
    const auto shape = info.at("shape");
    const int rows = shape.at(0).get<int>();
    const int cols = shape.at(1).get<int>();
    Mat m(rows, cols);
    in.seekg(data_start + static_cast<std::streamoff>(info.at("offset").get<uint64_t>()));
    in.read(reinterpret_cast<char*>(m.d.data()),
            static_cast<std::streamsize>(m.d.size() * sizeof(double)));
    if (!in) throw std::runtime_error("truncated checkpoint data for '" + full_name + "'");

    if (full_name.rfind("opt.m/", 0) == 0) {
      store.moments_m()[full_name.substr(6)] = std::move(m);
    } else if (full_name.rfind("opt.v/", 0) == 0) {
      store.moments_v()[full_name.substr(6)] = std::move(m);
    } else {
      store.params_mutable()[full_name] = std::move(m);
    }
  }
  // Any parameter without stored moments gets zero moments.
  for (const auto& [name, p] : store.params()) {
    if (!store.moments_m().count(name)) store.moments_m()[name] = Mat(p.rows, p.cols);
    if (!store.moments_v().count(name)) store.moments_v()[name] = Mat(p.rows, p.cols);
  }
  return store;
}

}  // namespace traj
