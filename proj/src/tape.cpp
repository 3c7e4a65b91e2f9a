// Copyright 2026 The mosgeom Authors
// SPDX-License-Identifier: Apache-2.0

#include "mosgeom/tape.hpp"

#include <cmath>
#include <sstream>

namespace mosgeom {

namespace {

void require_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    std::ostringstream msg;
    msg << op << ": shape mismatch (" << a.rows() << "x" << a.cols() << " vs " << b.rows() << "x"
        << b.cols() << ")";
    throw GradError(msg.str());
  }
}

void require_scalar(const Mat& a, const char* op) {
  if (a.rows() != 1 || a.cols() != 1) {
    throw GradError(std::string(op) + ": curvature must be a 1x1 value");
  }
}

Curvature curvature_of(const Mat& kappa, double epsilon_zero) {
  return Curvature(kappa(0, 0), true, epsilon_zero);
}

// d sqrt|kappa| / d kappa.
double dsqrt_abs(const Curvature& k) { return k.flat() ? 0.0 : k.sgn() / (2.0 * k.sqrt_abs()); }

// d phi / d kappa with phi = 1/|kappa|.
double dphi(const Curvature& k) { return k.flat() ? 0.0 : -k.sgn() / (k.kappa * k.kappa); }

Mat scalar_mat(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return m;
}

} // namespace

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) {
    throw GradError("tape: invalid variable handle", v.id);
  }
  return nodes_[v.id];
}

Var Tape::push(std::string op, std::vector<Var> inputs, Mat value, Vjp vjp) {
  if (backward_done_) {
    throw GradError("tape: cannot record after backward; start a new tape");
  }
  Node n;
  n.op = std::move(op);
  n.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    node(in);
    n.inputs.push_back(in.id);
  }
  n.value = std::move(value);
  n.vjp = std::move(vjp);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::leaf(const std::string& name, Mat value) {
  if (leaves_.count(name) != 0) {
    throw GradError("tape: duplicate leaf '" + name + "'");
  }
  Var v = push("leaf", {}, std::move(value), nullptr);
  nodes_[v.id].leaf_name = name;
  leaves_[name] = v.id;
  return v;
}

Var Tape::constant(Mat value) { return push("constant", {}, std::move(value), nullptr); }

Var Tape::record(std::string op, std::vector<Var> inputs, Mat value, Vjp vjp) {
  return push(std::move(op), std::move(inputs), std::move(value), std::move(vjp));
}

const Mat& Tape::value(Var v) const { return node(v).value; }

double Tape::scalar(Var v) const {
  const Mat& m = value(v);
  require_scalar(m, "scalar");
  return m(0, 0);
}

const std::string& Tape::op(Var v) const { return node(v).op; }

Var Tape::matmul(Var a, Var b) {
  const Mat& av = value(a);
  const Mat& bv = value(b);
  if (av.cols() != bv.rows()) {
    throw GradError("matmul: inner dimensions differ");
  }
  return push("matmul", {a, b}, av * bv, [this, a, b](const Mat& g) {
    return std::vector<Mat>{g * value(b).transpose(), value(a).transpose() * g};
  });
}

Var Tape::add(Var a, Var b) {
  require_shape(value(a), value(b), "add");
  return push("add", {a, b}, value(a) + value(b),
              [](const Mat& g) { return std::vector<Mat>{g, g}; });
}

Var Tape::sub(Var a, Var b) {
  require_shape(value(a), value(b), "sub");
  return push("sub", {a, b}, value(a) - value(b),
              [](const Mat& g) { return std::vector<Mat>{g, -g}; });
}

Var Tape::scale(Var a, double c) {
  return push("scale", {a}, c * value(a), [c](const Mat& g) { return std::vector<Mat>{c * g}; });
}

Var Tape::hadamard(Var a, Var b) {
  require_shape(value(a), value(b), "hadamard");
  return push("hadamard", {a, b}, value(a).cwiseProduct(value(b)), [this, a, b](const Mat& g) {
    return std::vector<Mat>{g.cwiseProduct(value(b)), g.cwiseProduct(value(a))};
  });
}

Var Tape::divide(Var a, Var b) {
  require_shape(value(a), value(b), "divide");
  return push("divide", {a, b}, value(a).cwiseQuotient(value(b)), [this, a, b](const Mat& g) {
    const Mat& bv = value(b);
    Mat ga = g.cwiseQuotient(bv);
    Mat gb = -ga.cwiseProduct(value(a)).cwiseQuotient(bv);
    return std::vector<Mat>{std::move(ga), std::move(gb)};
  });
}

Var Tape::sqrt(Var a) {
  Mat y = value(a).cwiseSqrt();
  Var out = push("sqrt", {a}, y, nullptr);
  nodes_[out.id].vjp = [this, out](const Mat& g) {
    return std::vector<Mat>{g.cwiseQuotient(2.0 * value(out))};
  };
  return out;
}

Var Tape::tanh(Var a) {
  Var out = push("tanh", {a}, value(a).array().tanh().matrix(), nullptr);
  nodes_[out.id].vjp = [this, out](const Mat& g) {
    const Mat& y = value(out);
    return std::vector<Mat>{(g.array() * (1.0 - y.array().square())).matrix()};
  };
  return out;
}

Var Tape::col_sq_norms(Var a) {
  return push("col_sq_norms", {a}, value(a).colwise().squaredNorm(), [this, a](const Mat& g) {
    const Mat& x = value(a);
    Mat gx = 2.0 * x;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      gx.col(j) *= g(0, j);
    }
    return std::vector<Mat>{std::move(gx)};
  });
}

Var Tape::sum(Var a) {
  const Mat& x = value(a);
  const Eigen::Index rows = x.rows();
  const Eigen::Index cols = x.cols();
  return push("sum", {a}, scalar_mat(x.sum()), [rows, cols](const Mat& g) {
    return std::vector<Mat>{Mat::Constant(rows, cols, g(0, 0))};
  });
}

Var Tape::weighted_sum(Var a, const Mat& weights) {
  require_shape(value(a), weights, "weighted_sum");
  return push("weighted_sum", {a}, scalar_mat(value(a).cwiseProduct(weights).sum()),
              [weights](const Mat& g) { return std::vector<Mat>{g(0, 0) * weights}; });
}

Var Tape::add_col(Var m, Var col) {
  const Mat& mv = value(m);
  const Mat& cv = value(col);
  if (cv.cols() != 1 || cv.rows() != mv.rows()) {
    throw GradError("add_col: column shape mismatch");
  }
  Mat y = mv.colwise() + cv.col(0);
  return push("add_col", {m, col}, std::move(y), [](const Mat& g) {
    Mat gc = g.rowwise().sum();
    return std::vector<Mat>{g, std::move(gc)};
  });
}

Var Tape::mul_row(Var m, Var row) {
  const Mat& mv = value(m);
  const Mat& rv = value(row);
  if (rv.rows() != 1 || rv.cols() != mv.cols()) {
    throw GradError("mul_row: row shape mismatch");
  }
  Mat y = mv;
  for (Eigen::Index j = 0; j < y.cols(); ++j) {
    y.col(j) *= rv(0, j);
  }
  return push("mul_row", {m, row}, std::move(y), [this, m, row](const Mat& g) {
    const Mat& mv2 = value(m);
    const Mat& rv2 = value(row);
    Mat gm = g;
    for (Eigen::Index j = 0; j < gm.cols(); ++j) {
      gm.col(j) *= rv2(0, j);
    }
    Mat gr = g.cwiseProduct(mv2).colwise().sum();
    return std::vector<Mat>{std::move(gm), std::move(gr)};
  });
}

Var Tape::softmax_cols(Var a) {
  const Mat& x = value(a);
  Mat y(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double shift = x.col(j).maxCoeff();
    y.col(j) = (x.col(j).array() - shift).exp().matrix();
    y.col(j) /= y.col(j).sum();
  }
  Var out = push("softmax", {a}, std::move(y), nullptr);
  nodes_[out.id].vjp = [this, out](const Mat& g) {
    const Mat& p = value(out);
    Mat gx(p.rows(), p.cols());
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      const double inner = g.col(j).dot(p.col(j));
      gx.col(j) = p.col(j).cwiseProduct((g.col(j).array() - inner).matrix());
    }
    return std::vector<Mat>{std::move(gx)};
  };
  return out;
}

Var Tape::gather_cols(Var a, std::vector<Eigen::Index> cols) {
  const Mat& x = value(a);
  Mat y(x.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) {
    if (cols[k] < 0 || cols[k] >= x.cols()) {
      throw GradError("gather_cols: column index out of range");
    }
    y.col(static_cast<Eigen::Index>(k)) = x.col(cols[k]);
  }
  const Eigen::Index rows = x.rows();
  const Eigen::Index total = x.cols();
  return push("gather_cols", {a}, std::move(y), [cols = std::move(cols), rows, total](const Mat& g) {
    Mat gx = Mat::Zero(rows, total);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      gx.col(cols[k]) += g.col(static_cast<Eigen::Index>(k));
    }
    return std::vector<Mat>{std::move(gx)};
  });
}

Var Tape::scatter_cols(Var a, std::vector<Eigen::Index> cols, Eigen::Index total_cols) {
  const Mat& x = value(a);
  if (static_cast<Eigen::Index>(cols.size()) != x.cols()) {
    throw GradError("scatter_cols: index count must match column count");
  }
  Mat y = Mat::Zero(x.rows(), total_cols);
  for (std::size_t k = 0; k < cols.size(); ++k) {
    if (cols[k] < 0 || cols[k] >= total_cols) {
      throw GradError("scatter_cols: column index out of range");
    }
    y.col(cols[k]) += x.col(static_cast<Eigen::Index>(k));
  }
  return push("scatter_cols", {a}, std::move(y), [cols = std::move(cols)](const Mat& g) {
    Mat gx(g.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) {
      gx.col(static_cast<Eigen::Index>(k)) = g.col(cols[k]);
    }
    return std::vector<Mat>{std::move(gx)};
  });
}

Var Tape::cross_entropy(Var logits, std::span<const int> labels) {
  const Mat& z = value(logits);
  if (static_cast<Eigen::Index>(labels.size()) != z.cols()) {
    throw GradError("cross_entropy: one label per column required");
  }
  Mat probs(z.rows(), z.cols());
  double loss = 0.0;
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const int label = labels[static_cast<std::size_t>(j)];
    if (label < 0 || label >= z.rows()) {
      throw GradError("cross_entropy: label out of range");
    }
    const double shift = z.col(j).maxCoeff();
    probs.col(j) = (z.col(j).array() - shift).exp().matrix();
    const double total = probs.col(j).sum();
    probs.col(j) /= total;
    loss -= (z(label, j) - shift) - std::log(total);
  }
  const double count = static_cast<double>(z.cols());
  std::vector<int> owned(labels.begin(), labels.end());
  return push("cross_entropy", {logits}, scalar_mat(loss / count),
              [probs = std::move(probs), owned = std::move(owned), count](const Mat& g) {
                Mat gz = probs;
                for (std::size_t j = 0; j < owned.size(); ++j) {
                  gz(owned[j], static_cast<Eigen::Index>(j)) -= 1.0;
                }
                gz *= g(0, 0) / count;
                return std::vector<Mat>{std::move(gz)};
              });
}

Var Tape::inv_stereo_space(Var x, Var kappa, double epsilon_zero, GuardMode mode) {
  require_scalar(value(kappa), "inv_stereo_space");
  const Curvature k = curvature_of(value(kappa), epsilon_zero);
  const Mat& xv = value(x);
  if (k.flat()) {
    return push("inv_stereo_space", {x, kappa}, xv,
                [](const Mat& g) { return std::vector<Mat>{g, Mat::Zero(1, 1)}; });
  }
  Mat y(xv.rows(), xv.cols());
  for (Eigen::Index j = 0; j < xv.cols(); ++j) {
    const double denom = 1.0 + k.kappa * xv.col(j).squaredNorm();
    if (mode == GuardMode::verify && std::abs(denom) < limits::kPoleGuard) {
      std::ostringstream msg;
      msg << "inv_stereo_space: column " << j << " at the stereographic pole";
      throw GeometryError(GeometryError::Kind::pole, msg.str());
    }
    y.col(j) = (2.0 / denom) * xv.col(j);
  }
  return push("inv_stereo_space", {x, kappa}, std::move(y), [this, x, k](const Mat& g) {
    const Mat& xv2 = value(x);
    Mat gx(xv2.rows(), xv2.cols());
    double gk = 0.0;
    for (Eigen::Index j = 0; j < xv2.cols(); ++j) {
      const double sq = xv2.col(j).squaredNorm();
      const double denom = 1.0 + k.kappa * sq;
      const double xg = xv2.col(j).dot(g.col(j));
      gx.col(j) = (2.0 / denom) * g.col(j) - (4.0 * k.kappa * xg / (denom * denom)) * xv2.col(j);
      gk += -2.0 * xg * sq / (denom * denom);
    }
    return std::vector<Mat>{std::move(gx), scalar_mat(gk)};
  });
}

Var Tape::lift_time(Var s, Var kappa, double epsilon_zero, GuardMode mode) {
  require_scalar(value(kappa), "lift_time");
  const Curvature k = curvature_of(value(kappa), epsilon_zero);
  const Mat& sv = value(s);
  Mat a(1, sv.cols());
  for (Eigen::Index j = 0; j < sv.cols(); ++j) {
    const double radicand = lift_radicand(sv.col(j).squaredNorm(), k);
    if (radicand < 0.0 && mode == GuardMode::verify) {
      std::ostringstream msg;
      msg << "lift_time: column " << j << " outside the spherical domain";
      throw GeometryError(GeometryError::Kind::spherical_domain, msg.str());
    }
    a(0, j) = std::sqrt(std::max(radicand, 0.0));
  }
  Var out = push("lift_time", {s, kappa}, std::move(a), nullptr);
  nodes_[out.id].vjp = [this, s, out, k](const Mat& g) {
    const Mat& sv2 = value(s);
    const Mat& av = value(out);
    Mat gs = Mat::Zero(sv2.rows(), sv2.cols());
    double gk = 0.0;
    const double sign = k.lift_sign();
    const double phi_prime = dphi(k);
    for (Eigen::Index j = 0; j < sv2.cols(); ++j) {
      if (av(0, j) > 0.0) {
        gs.col(j) = (g(0, j) * sign / av(0, j)) * sv2.col(j);
        gk += g(0, j) * phi_prime / (2.0 * av(0, j));
      }
    }
    return std::vector<Mat>{std::move(gs), scalar_mat(gk)};
  };
  return out;
}

Var Tape::stereo(Var time, Var s, Var kappa, double epsilon_zero) {
  require_scalar(value(kappa), "stereo");
  const Curvature k = curvature_of(value(kappa), epsilon_zero);
  const Mat& tv = value(time);
  const Mat& sv = value(s);
  if (tv.rows() != 1 || tv.cols() != sv.cols()) {
    throw GradError("stereo: time row does not match point count");
  }
  if (k.flat()) {
    const Eigen::Index n = tv.cols();
    return push("stereo", {time, s, kappa}, sv, [n](const Mat& g) {
      return std::vector<Mat>{Mat::Zero(1, n), g, Mat::Zero(1, 1)};
    });
  }
  const double c = k.sqrt_abs();
  Mat y(sv.rows(), sv.cols());
  for (Eigen::Index j = 0; j < sv.cols(); ++j) {
    const double denom = 1.0 + c * tv(0, j);
    if (std::abs(denom) < limits::kPoleGuard) {
      std::ostringstream msg;
      msg << "stereo: column " << j << " at the projection pole";
      throw GeometryError(GeometryError::Kind::pole, msg.str());
    }
    y.col(j) = sv.col(j) / denom;
  }
  return push("stereo", {time, s, kappa}, std::move(y), [this, time, s, k, c](const Mat& g) {
    const Mat& tv2 = value(time);
    const Mat& sv2 = value(s);
    Mat gt(1, tv2.cols());
    Mat gs(sv2.rows(), sv2.cols());
    double gk = 0.0;
    const double dc = dsqrt_abs(k);
    for (Eigen::Index j = 0; j < sv2.cols(); ++j) {
      const double denom = 1.0 + c * tv2(0, j);
      const double gsdot = g.col(j).dot(sv2.col(j));
      gs.col(j) = g.col(j) / denom;
      gt(0, j) = -c * gsdot / (denom * denom);
      gk += -gsdot * tv2(0, j) * dc / (denom * denom);
    }
    return std::vector<Mat>{std::move(gt), std::move(gs), scalar_mat(gk)};
  });
}

Var Tape::radial_clamp(Var x, Var kappa, double epsilon_zero, double active_sign, double margin) {
  require_scalar(value(kappa), "radial_clamp");
  const Curvature k = curvature_of(value(kappa), epsilon_zero);
  const Mat& xv = value(x);
  const bool active = !k.flat() && k.sgn() == active_sign;
  if (!active) {
    return push("radial_clamp", {x, kappa}, xv,
                [](const Mat& g) { return std::vector<Mat>{g, Mat::Zero(1, 1)}; });
  }
  const double radius = spherical_radius(k, margin);
  Mat y = xv;
  std::vector<Eigen::Index> clamped;
  for (Eigen::Index j = 0; j < xv.cols(); ++j) {
    const double norm = xv.col(j).norm();
    if (norm > radius) {
      y.col(j) *= radius / norm;
      clamped.push_back(j);
    }
  }
  // dR/dkappa for R = (1 - margin) / sqrt|kappa|.
  const double dradius = -0.5 * (1.0 - margin) * k.sgn() / (std::abs(k.kappa) * k.sqrt_abs());
  return push("radial_clamp", {x, kappa}, std::move(y),
              [this, x, radius, dradius, clamped = std::move(clamped)](const Mat& g) {
                const Mat& xv2 = value(x);
                Mat gx = g;
                double gk = 0.0;
                for (Eigen::Index j : clamped) {
                  const double norm = xv2.col(j).norm();
                  const Vec unit = xv2.col(j) / norm;
                  const double ug = unit.dot(g.col(j));
                  gx.col(j) = (radius / norm) * (g.col(j) - ug * unit);
                  gk += ug * dradius;
                }
                return std::vector<Mat>{std::move(gx), scalar_mat(gk)};
              });
}

GradMap Tape::backward(Var output, const Mat& seed) {
  if (nodes_.empty()) {
    throw GradError("backward called before any forward computation was recorded");
  }
  if (backward_done_) {
    throw GradError("backward already ran on this tape");
  }
  const Node& out = node(output);
  require_shape(out.value, seed, "backward seed");
  backward_done_ = true;

  std::vector<Mat> grads(output.id + 1);
  grads[output.id] = seed;
  for (std::size_t i = output.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (grads[i].size() == 0 || !n.vjp) {
      continue;
    }
    if (!grads[i].allFinite()) {
      std::ostringstream msg;
      msg << "non-finite gradient reached node " << i << " (" << n.op << ")";
      throw GradError(msg.str(), i);
    }
    std::vector<Mat> contrib = n.vjp(grads[i]);
    for (std::size_t k = 0; k < n.inputs.size() && k < contrib.size(); ++k) {
      if (contrib[k].size() == 0) {
        continue;
      }
      Mat& target = grads[n.inputs[k]];
      if (target.size() == 0) {
        target = std::move(contrib[k]);
      } else {
        target += contrib[k];
      }
    }
  }

  GradMap result;
  for (const auto& [name, id] : leaves_) {
    Mat g = id < grads.size() ? std::move(grads[id]) : Mat();
    if (g.size() == 0) {
      g = Mat::Zero(nodes_[id].value.rows(), nodes_[id].value.cols());
    }
    if (!g.allFinite()) {
      std::ostringstream msg;
      msg << "non-finite gradient for leaf '" << name << "' (node " << id << ")";
      throw GradError(msg.str(), id);
    }
    result.emplace(name, std::move(g));
  }
  return result;
}

GradMap Tape::backward(Var output) { return backward(output, scalar_mat(1.0)); }

} // namespace mosgeom
