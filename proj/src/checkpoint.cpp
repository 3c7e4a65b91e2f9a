// Copyright 2026 The mosgeom Authors
// SPDX-License-Identifier: Apache-2.0

#include "mosgeom/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

namespace mosgeom {

namespace {

constexpr std::string_view kMagic = "MOSG";
constexpr std::uint8_t kTensorSection = 1;
constexpr std::uint8_t kOptimizerSection = 2;

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { le(v, 4); }
  void i32(std::int32_t v) { le(static_cast<std::uint32_t>(v), 4); }
  void i64(std::int64_t v) { le(static_cast<std::uint64_t>(v), 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void raw(std::string_view s) { out_.append(s); }
  void matrix_rowmajor(const Mat& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        f64(m(r, c));
      }
    }
  }
  std::string take() { return std::move(out_); }

 private:
  void le(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) {
      out_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::int32_t i32() { return static_cast<std::int32_t>(static_cast<std::uint32_t>(le(4))); }
  std::int64_t i64() { return static_cast<std::int64_t>(le(8)); }
  double f64() { return std::bit_cast<double>(le(8)); }
  std::string str() {
    const std::uint32_t n = u32();
    return std::string(take(n));
  }
  std::string_view take(std::size_t n) {
    if (n > in_.size() - pos_) {
      throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
    }
    const std::string_view out = in_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  Mat matrix_rowmajor(Eigen::Index rows, Eigen::Index cols) {
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        m(r, c) = f64();
      }
    }
    return m;
  }
  bool done() const noexcept { return pos_ == in_.size(); }

 private:
  std::uint64_t le(int bytes) {
    const std::string_view b = take(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[static_cast<std::size_t>(i)])) << (8 * i);
    }
    return v;
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

void write_group(Writer& w, const ParamGroup& group) {
  const GroupConfig& c = group.config;
  w.u8(c.rule == UpdateRule::adamw ? 0 : 1);
  w.f64(c.schedule.base_lr);
  w.f64(c.schedule.warmup_ratio);
  w.i64(c.schedule.total_steps);
  w.f64(c.weight_decay);
  w.f64(c.beta1);
  w.f64(c.beta2);
  w.f64(c.eps);
  w.i64(group.steps);
  w.u32(static_cast<std::uint32_t>(group.members.size()));
  for (const std::string& name : group.members) {
    const ParamState& st = group.state.at(name);
    w.str(name);
    w.u32(static_cast<std::uint32_t>(st.m.size()));
    for (double v : st.m) {
      w.f64(v);
    }
    for (double v : st.v) {
      w.f64(v);
    }
  }
}

ParamGroup read_group(Reader& r, std::string label) {
  ParamGroup group;
  group.label = std::move(label);
  GroupConfig& c = group.config;
  const std::uint8_t rule = r.u8();
  if (rule > 1) {
    throw CheckpointError("checkpoint: unknown update rule " + std::to_string(rule));
  }
  c.rule = rule == 0 ? UpdateRule::adamw : UpdateRule::sgd;
  c.schedule.base_lr = r.f64();
  c.schedule.warmup_ratio = r.f64();
  c.schedule.total_steps = r.i64();
  c.weight_decay = r.f64();
  c.beta1 = r.f64();
  c.beta2 = r.f64();
  c.eps = r.f64();
  group.steps = r.i64();
  const std::uint32_t members = r.u32();
  for (std::uint32_t i = 0; i < members; ++i) {
    std::string name = r.str();
    const std::uint32_t n = r.u32();
    ParamState st;
    st.m.resize(n);
    st.v.resize(n);
    for (double& v : st.m) {
      v = r.f64();
    }
    for (double& v : st.v) {
      v = r.f64();
    }
    group.members.push_back(name);
    group.state.emplace(std::move(name), std::move(st));
  }
  return group;
}

} // namespace

std::string encode_checkpoint(const Checkpoint& checkpoint) {
  const MoSLoRAParams& p = checkpoint.layer;
  const LayerConfig& cfg = p.config;
  Writer w;
  w.u8(kCheckpointVersion);
  w.raw(kMagic);
  w.i32(cfg.d_in);
  w.i32(cfg.d_out);
  w.i32(cfg.rank);
  w.i32(cfg.n_experts);
  w.i32(cfg.top_k);
  for (int s : cfg.group_sizes) {
    w.i32(s);
  }
  for (double k : cfg.initial_curvature) {
    w.f64(k);
  }
  w.f64(cfg.scaling.gamma);
  w.f64(cfg.aux_coefficient);
  w.f64(cfg.epsilon_zero);
  w.u8(cfg.guard == GuardMode::verify ? 0 : 1);
  for (const ExpertParams& e : p.experts) {
    w.u8(static_cast<std::uint8_t>(e.group));
    w.u8(e.curvature.learnable ? 1 : 0);
  }
  for (const ExpertParams& e : p.experts) {
    w.matrix_rowmajor(e.A);
    w.matrix_rowmajor(e.B);
  }
  w.matrix_rowmajor(p.router);
  for (const ExpertParams& e : p.experts) {
    w.f64(e.curvature.kappa);
  }

  const std::uint32_t sections =
      static_cast<std::uint32_t>(checkpoint.tensors.size()) + (checkpoint.optimizer ? 2u : 0u);
  w.u32(sections);
  for (const auto& [name, m] : checkpoint.tensors) {
    w.u8(kTensorSection);
    w.str(name);
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    w.matrix_rowmajor(m);
  }
  if (checkpoint.optimizer) {
    for (const ParamGroup* g : {&checkpoint.optimizer->curvature, &checkpoint.optimizer->capacity}) {
      w.u8(kOptimizerSection);
      w.str(g->label);
      write_group(w, *g);
    }
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  const std::uint8_t version = r.u8();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  }
  if (r.take(kMagic.size()) != kMagic) {
    throw CheckpointError("checkpoint: bad magic");
  }
  LayerConfig cfg;
  cfg.d_in = r.i32();
  cfg.d_out = r.i32();
  cfg.rank = r.i32();
  cfg.n_experts = r.i32();
  cfg.top_k = r.i32();
  for (int& s : cfg.group_sizes) {
    s = r.i32();
  }
  for (double& k : cfg.initial_curvature) {
    k = r.f64();
  }
  const double gamma = r.f64();
  if (!(gamma > 0.0)) {
    throw CheckpointError("checkpoint: non-positive gamma");
  }
  cfg.scaling = ScalingConfig(gamma);
  cfg.aux_coefficient = r.f64();
  cfg.epsilon_zero = r.f64();
  cfg.guard = r.u8() == 0 ? GuardMode::verify : GuardMode::rescale;
  try {
    cfg.validate();
  } catch (const LayerError& e) {
    throw CheckpointError(std::string("checkpoint header: ") + e.what());
  }

  Checkpoint out;
  MoSLoRAParams& p = out.layer;
  p.config = cfg;
  p.experts.resize(static_cast<std::size_t>(cfg.n_experts));
  for (ExpertParams& e : p.experts) {
    const std::uint8_t tag = r.u8();
    if (tag >= kGroupCount) {
      throw CheckpointError("checkpoint: bad group tag");
    }
    e.group = static_cast<GeometryGroup>(tag);
    e.curvature.learnable = r.u8() != 0;
    e.curvature.epsilon_zero = cfg.epsilon_zero;
  }
  for (ExpertParams& e : p.experts) {
    e.A = r.matrix_rowmajor(cfg.rank, cfg.d_in);
    e.B = r.matrix_rowmajor(cfg.d_out, cfg.rank);
  }
  p.router = r.matrix_rowmajor(cfg.n_experts, cfg.d_in);
  for (ExpertParams& e : p.experts) {
    e.curvature.kappa = r.f64();
  }

  const std::uint32_t sections = r.u32();
  for (std::uint32_t i = 0; i < sections; ++i) {
    const std::uint8_t kind = r.u8();
    std::string name = r.str();
    if (kind == kTensorSection) {
      const std::uint32_t rows = r.u32();
      const std::uint32_t cols = r.u32();
      out.tensors[name] = r.matrix_rowmajor(rows, cols);
    } else if (kind == kOptimizerSection) {
      if (!out.optimizer) {
        out.optimizer.emplace();
      }
      ParamGroup group = read_group(r, name);
      if (name == "curvature") {
        out.optimizer->curvature = std::move(group);
      } else {
        out.optimizer->capacity = std::move(group);
      }
    } else {
      throw CheckpointError("checkpoint: unknown section kind " + std::to_string(kind));
    }
  }
  if (!r.done()) {
    throw CheckpointError("checkpoint: trailing bytes");
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const std::string bytes = encode_checkpoint(checkpoint);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) {
    throw CheckpointError("cannot open " + path.string() + " for writing");
  }
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) {
    throw CheckpointError("write failed: " + path.string());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw CheckpointError("cannot open " + path.string());
  }
  std::ostringstream buf;
  buf << f.rdbuf();
  return decode_checkpoint(buf.str());
}

} // namespace mosgeom
