#include "echoplan/autodiff.hpp"

#include <cmath>

namespace echoplan::ad {

const Matrix& Var::value() const { return tape_->node(idx_).value; }

Matrix& ParamStore::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::runtime_error("unknown parameter: " + name);
  return it->second;
}

const Matrix& ParamStore::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::runtime_error("unknown parameter: " + name);
  return it->second;
}

void ParamStore::insert(const std::string& name, Matrix m) {
  if (!tensors.emplace(name, std::move(m)).second)
    throw std::runtime_error("duplicate parameter: " + name);
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(tensors.size());
  for (const auto& [k, v] : tensors) out.push_back(k);
  return out;
}

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix& Tape::grad_buf(int idx) {
  Node& n = nodes_[idx];
  // Constants and detached values absorb gradient into a throwaway buffer so
  // their stored grad stays empty.
  if (!n.requires_grad) {
    scratch_.setZero(n.value.rows(), n.value.cols());
    return scratch_;
  }
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::constant(Matrix v) {
  Node n;
  n.value = std::move(v);
  return push(std::move(n));
}

Var Tape::leaf(Matrix v) {
  Node n;
  n.value = std::move(v);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::param(ParamStore& store, const std::string& name) {
  auto it = param_nodes_.find(name);
  if (it != param_nodes_.end()) return Var(this, it->second);
  Var v = leaf(store.at(name));
  param_nodes_[name] = v.index();
  touched_.insert(name);
  return v;
}

Var Tape::detach(Var v) { return constant(v.value()); }

static void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + ")");
}

Var Tape::add(Var a, Var b) {
  check_same_shape(a.value(), b.value(), "add");
  Node n;
  n.value = a.value() + b.value();
  n.requires_grad = node(a.index()).requires_grad || node(b.index()).requires_grad;
  int ia = a.index(), ib = b.index();
  n.backward = [ia, ib](Tape& t, Node& self) {
    t.grad_buf(ia) += self.grad;
    t.grad_buf(ib) += self.grad;
  };
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  check_same_shape(a.value(), b.value(), "sub");
  Node n;
  n.value = a.value() - b.value();
  n.requires_grad = node(a.index()).requires_grad || node(b.index()).requires_grad;
  int ia = a.index(), ib = b.index();
  n.backward = [ia, ib](Tape& t, Node& self) {
    t.grad_buf(ia) += self.grad;
    t.grad_buf(ib) -= self.grad;
  };
  return push(std::move(n));
}

Var Tape::scale(Var a, double s) {
  Node n;
  n.value = a.value() * s;
  n.requires_grad = node(a.index()).requires_grad;
  int ia = a.index();
  n.backward = [ia, s](Tape& t, Node& self) { t.grad_buf(ia) += s * self.grad; };
  return push(std::move(n));
}

Var Tape::cmul(Var a, Var b) {
  check_same_shape(a.value(), b.value(), "cmul");
  Node n;
  n.value = a.value().cwiseProduct(b.value());
  n.requires_grad = node(a.index()).requires_grad || node(b.index()).requires_grad;
  int ia = a.index(), ib = b.index();
  n.backward = [ia, ib](Tape& t, Node& self) {
    t.grad_buf(ia) += self.grad.cwiseProduct(t.node(ib).value);
    t.grad_buf(ib) += self.grad.cwiseProduct(t.node(ia).value);
  };
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  if (a.value().cols() != b.value().rows())
    throw std::invalid_argument("matmul: inner dimension mismatch");
  Node n;
  n.value = a.value() * b.value();
  n.requires_grad = node(a.index()).requires_grad || node(b.index()).requires_grad;
  int ia = a.index(), ib = b.index();
  n.backward = [ia, ib](Tape& t, Node& self) {
    t.grad_buf(ia) += self.grad * t.node(ib).value.transpose();
    t.grad_buf(ib) += t.node(ia).value.transpose() * self.grad;
  };
  return push(std::move(n));
}

Var Tape::transpose(Var a) {
  Node n;
  n.value = a.value().transpose();
  n.requires_grad = node(a.index()).requires_grad;
  int ia = a.index();
  n.backward = [ia](Tape& t, Node& self) { t.grad_buf(ia) += self.grad.transpose(); };
  return push(std::move(n));
}

Var Tape::tanh(Var a) {
  Node n;
  n.value = a.value().array().tanh();
  n.requires_grad = node(a.index()).requires_grad;
  int ia = a.index();
  int self_idx = static_cast<int>(nodes_.size());
  n.backward = [ia, self_idx](Tape& t, Node& self) {
    const Matrix& y = t.node(self_idx).value;
    t.grad_buf(ia) += self.grad.cwiseProduct((1.0 - y.array().square()).matrix());
  };
  return push(std::move(n));
}

Var Tape::softmax_rows(Var a) {
  Node n;
  const Matrix& x = a.value();
  n.value.resize(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    Eigen::ArrayXd row = x.row(r).array();
    row -= row.maxCoeff();
    Eigen::ArrayXd e = row.exp();
    n.value.row(r) = (e / e.sum()).matrix();
  }
  n.requires_grad = node(a.index()).requires_grad;
  int ia = a.index();
  int self_idx = static_cast<int>(nodes_.size());
  n.backward = [ia, self_idx](Tape& t, Node& self) {
    const Matrix& y = t.node(self_idx).value;
    Matrix& ga = t.grad_buf(ia);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      double dot = self.grad.row(r).dot(y.row(r));
      ga.row(r) += y.row(r).cwiseProduct(self.grad.row(r) - Eigen::RowVectorXd::Constant(y.cols(), dot));
    }
  };
  return push(std::move(n));
}

Var Tape::softmax_cols(Var a) { return transpose(softmax_rows(transpose(a))); }

Var Tape::layernorm_rows(Var a, double eps) {
  const Matrix& x = a.value();
  Node n;
  n.value.resize(x.rows(), x.cols());
  Eigen::VectorXd inv_sigma(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mu = x.row(r).mean();
    double var = (x.row(r).array() - mu).square().mean();
    double is = 1.0 / std::sqrt(var + eps);
    inv_sigma(r) = is;
    n.value.row(r) = ((x.row(r).array() - mu) * is).matrix();
  }
  n.requires_grad = node(a.index()).requires_grad;
  int ia = a.index();
  int self_idx = static_cast<int>(nodes_.size());
  n.backward = [ia, self_idx, inv_sigma](Tape& t, Node& self) {
    const Matrix& y = t.node(self_idx).value;  // normalized values
    Matrix& ga = t.grad_buf(ia);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      double m1 = self.grad.row(r).mean();
      double m2 = self.grad.row(r).cwiseProduct(y.row(r)).mean();
      ga.row(r) += inv_sigma(r) * (self.grad.row(r).array() - m1 - y.row(r).array() * m2).matrix();
    }
  };
  return push(std::move(n));
}

Var Tape::add_row(Var a, Var row) {
  if (row.value().rows() != 1 || row.value().cols() != a.value().cols())
    throw std::invalid_argument("add_row: row must be 1 x cols(a)");
  Node n;
  n.value = a.value().rowwise() + Eigen::RowVectorXd(row.value().row(0));
  n.requires_grad = node(a.index()).requires_grad || node(row.index()).requires_grad;
  int ia = a.index(), ir = row.index();
  n.backward = [ia, ir](Tape& t, Node& self) {
    t.grad_buf(ia) += self.grad;
    t.grad_buf(ir).row(0) += self.grad.colwise().sum();
  };
  return push(std::move(n));
}

Var Tape::mul_row(Var a, Var row) {
  if (row.value().rows() != 1 || row.value().cols() != a.value().cols())
    throw std::invalid_argument("mul_row: row must be 1 x cols(a)");
  Node n;
  n.value = a.value().array().rowwise() * row.value().row(0).array();
  n.requires_grad = node(a.index()).requires_grad || node(row.index()).requires_grad;
  int ia = a.index(), ir = row.index();
  n.backward = [ia, ir](Tape& t, Node& self) {
    t.grad_buf(ia) += (self.grad.array().rowwise() * t.node(ir).value.row(0).array()).matrix();
    t.grad_buf(ir).row(0) += self.grad.cwiseProduct(t.node(ia).value).colwise().sum();
  };
  return push(std::move(n));
}

Var Tape::rows(Var a, int start, int count) {
  if (start < 0 || count < 0 || start + count > a.value().rows())
    throw std::invalid_argument("rows: block out of range");
  Node n;
  n.value = a.value().middleRows(start, count);
  n.requires_grad = node(a.index()).requires_grad;
  int ia = a.index();
  n.backward = [ia, start, count](Tape& t, Node& self) {
    t.grad_buf(ia).middleRows(start, count) += self.grad;
  };
  return push(std::move(n));
}

Var Tape::cols(Var a, int start, int count) {
  if (start < 0 || count < 0 || start + count > a.value().cols())
    throw std::invalid_argument("cols: block out of range");
  Node n;
  n.value = a.value().middleCols(start, count);
  n.requires_grad = node(a.index()).requires_grad;
  int ia = a.index();
  n.backward = [ia, start, count](Tape& t, Node& self) {
    t.grad_buf(ia).middleCols(start, count) += self.grad;
  };
  return push(std::move(n));
}

Var Tape::hconcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("hconcat: empty");
  Eigen::Index rows = parts[0].value().rows();
  Eigen::Index total = 0;
  bool rg = false;
  for (const Var& p : parts) {
    if (p.value().rows() != rows) throw std::invalid_argument("hconcat: row mismatch");
    total += p.value().cols();
    rg = rg || node(p.index()).requires_grad;
  }
  Node n;
  n.value.resize(rows, total);
  std::vector<int> idx;
  std::vector<int> offs;
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    n.value.middleCols(c, p.value().cols()) = p.value();
    idx.push_back(p.index());
    offs.push_back(static_cast<int>(c));
    c += p.value().cols();
  }
  n.requires_grad = rg;
  n.backward = [idx, offs](Tape& t, Node& self) {
    for (std::size_t k = 0; k < idx.size(); ++k) {
      Matrix& g = t.grad_buf(idx[k]);
      g += self.grad.middleCols(offs[k], g.cols());
    }
  };
  return push(std::move(n));
}

Var Tape::flatten_row(Var a) {
  const Matrix& x = a.value();
  Node n;
  n.value.resize(1, x.rows() * x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index c = 0; c < x.cols(); ++c) n.value(0, r * x.cols() + c) = x(r, c);
  n.requires_grad = node(a.index()).requires_grad;
  int ia = a.index();
  n.backward = [ia](Tape& t, Node& self) {
    Matrix& g = t.grad_buf(ia);
    for (Eigen::Index r = 0; r < g.rows(); ++r)
      for (Eigen::Index c = 0; c < g.cols(); ++c) g(r, c) += self.grad(0, r * g.cols() + c);
  };
  return push(std::move(n));
}

Var Tape::permute_rows(Var a, const std::vector<int>& perm) {
  const Matrix& x = a.value();
  if (static_cast<Eigen::Index>(perm.size()) != x.rows())
    throw std::invalid_argument("permute_rows: perm size mismatch");
  Node n;
  n.value.resize(x.rows(), x.cols());
  for (std::size_t r = 0; r < perm.size(); ++r) n.value.row(r) = x.row(perm[r]);
  n.requires_grad = node(a.index()).requires_grad;
  int ia = a.index();
  n.backward = [ia, perm](Tape& t, Node& self) {
    Matrix& g = t.grad_buf(ia);
    for (std::size_t r = 0; r < perm.size(); ++r) g.row(perm[r]) += self.grad.row(r);
  };
  return push(std::move(n));
}

Var Tape::blockdiag_matmul(Var m, Var x, int nblocks) {
  const Matrix& mm = m.value();
  const Matrix& xx = x.value();
  if (mm.rows() != mm.cols()) throw std::invalid_argument("blockdiag_matmul: M must be square");
  if (xx.rows() != mm.rows() * nblocks)
    throw std::invalid_argument("blockdiag_matmul: rows(X) != nblocks * rows(M)");
  int bs = static_cast<int>(mm.rows());
  Node n;
  n.value.resize(xx.rows(), xx.cols());
  for (int b = 0; b < nblocks; ++b)
    n.value.middleRows(b * bs, bs) = mm * xx.middleRows(b * bs, bs);
  n.requires_grad = node(m.index()).requires_grad || node(x.index()).requires_grad;
  int im = m.index(), ix = x.index();
  n.backward = [im, ix, nblocks, bs](Tape& t, Node& self) {
    const Matrix& mv = t.node(im).value;
    const Matrix& xv = t.node(ix).value;
    Matrix& gm = t.grad_buf(im);
    Matrix& gx = t.grad_buf(ix);
    for (int b = 0; b < nblocks; ++b) {
      gm += self.grad.middleRows(b * bs, bs) * xv.middleRows(b * bs, bs).transpose();
      gx.middleRows(b * bs, bs) += mv.transpose() * self.grad.middleRows(b * bs, bs);
    }
  };
  return push(std::move(n));
}

Var Tape::mean_abs(Var a) {
  const Matrix& x = a.value();
  Node n;
  n.value = Matrix::Constant(1, 1, x.array().abs().mean());
  n.requires_grad = node(a.index()).requires_grad;
  int ia = a.index();
  n.backward = [ia](Tape& t, Node& self) {
    const Matrix& x = t.node(ia).value;
    double w = self.grad(0, 0) / static_cast<double>(x.size());
    t.grad_buf(ia) += (x.array().sign() * w).matrix();
  };
  return push(std::move(n));
}

Var Tape::mean_sq(Var a) {
  const Matrix& x = a.value();
  Node n;
  n.value = Matrix::Constant(1, 1, x.array().square().mean());
  n.requires_grad = node(a.index()).requires_grad;
  int ia = a.index();
  n.backward = [ia](Tape& t, Node& self) {
    const Matrix& x = t.node(ia).value;
    double w = 2.0 * self.grad(0, 0) / static_cast<double>(x.size());
    t.grad_buf(ia) += w * x;
  };
  return push(std::move(n));
}

void Tape::backward(Var loss) {
  if (loss.value().rows() != 1 || loss.value().cols() != 1)
    throw std::invalid_argument("backward: loss must be 1x1");
  grad_buf(loss.index())(0, 0) = 1.0;
  for (int i = loss.index(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, n);
  }
}

double Tape::scalar(Var v) const { return v.value()(0, 0); }
const Matrix& Tape::value(Var v) const { return nodes_[v.index()].value; }
const Matrix& Tape::grad(Var v) const { return nodes_[v.index()].grad; }
bool Tape::has_grad(Var v) const { return nodes_[v.index()].grad.size() != 0; }

Matrix Tape::grad_or_zero(Var v) const {
  const Node& n = nodes_[v.index()];
  if (n.grad.size() != 0) return n.grad;
  return Matrix::Zero(n.value.rows(), n.value.cols());
}

Matrix randn(std::mt19937_64& rng, int rows, int cols, double stddev) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = dist(rng) * stddev;
  return m;
}

}  // namespace echoplan::ad
