#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace echoplan::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

// One entry of the computation graph. Backward closures capture parent
// indices, never Node pointers (the node vector may reallocate).
struct Node {
  Matrix value;
  Matrix grad;  // lazily allocated; empty means "no gradient reached here"
  bool requires_grad = false;
  std::function<void(Tape&, Node&)> backward;
};

// Handle into a Tape. Cheap to copy; valid as long as the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int idx) : tape_(tape), idx_(idx) {}
  const Matrix& value() const;
  int index() const { return idx_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int idx_ = -1;
};

// Named parameter tensors. One store serves every pass of a model; blocks
// look tensors up by name so weight sharing is structural, not accidental.
struct ParamStore {
  std::map<std::string, Matrix> tensors;

  Matrix& at(const std::string& name);
  const Matrix& at(const std::string& name) const;
  bool has(const std::string& name) const { return tensors.count(name) > 0; }
  void insert(const std::string& name, Matrix m);
  std::vector<std::string> names() const;
};

// Reverse-mode tape over dense double matrices. Build a graph, call
// backward() on a 1x1 loss, read gradients off leaves.
class Tape {
 public:
  Var constant(Matrix v);
  Var leaf(Matrix v);
  // Looks up (and caches) a named tensor from the store; repeated calls with
  // the same name return the same node, and the name is recorded as touched.
  Var param(ParamStore& store, const std::string& name);
  Var detach(Var v);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var scale(Var a, double s);
  Var cmul(Var a, Var b);
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var tanh(Var a);
  Var softmax_rows(Var a);
  Var softmax_cols(Var a);
  Var layernorm_rows(Var a, double eps);
  Var add_row(Var a, Var row);   // broadcast a 1xC row over every row of a
  Var mul_row(Var a, Var row);   // broadcast Hadamard with a 1xC row
  Var rows(Var a, int start, int count);
  Var cols(Var a, int start, int count);
  Var hconcat(const std::vector<Var>& parts);
  Var flatten_row(Var a);  // row-major flatten to 1 x (r*c)
  Var permute_rows(Var a, const std::vector<int>& perm);
  // X is (nblocks*m) x C; multiplies each m-row block by the m x m matrix M.
  Var blockdiag_matmul(Var m, Var x, int nblocks);
  Var mean_abs(Var a);
  Var mean_sq(Var a);

  void backward(Var loss);

  double scalar(Var v) const;
  const Matrix& value(Var v) const;
  const Matrix& grad(Var v) const;
  bool has_grad(Var v) const;
  Matrix grad_or_zero(Var v) const;

  const std::set<std::string>& touched_params() const { return touched_; }
  const std::map<std::string, int>& param_nodes() const { return param_nodes_; }

  Node& node(int idx) { return nodes_[idx]; }
  const Node& node(int idx) const { return nodes_[idx]; }
  Matrix& grad_buf(int idx);  // allocates zeros on first touch
  std::size_t size() const { return nodes_.size(); }

 private:
  Var push(Node n);
  std::vector<Node> nodes_;
  Matrix scratch_;  // gradient sink for nodes that do not require grad
  std::map<std::string, int> param_nodes_;
  std::set<std::string> touched_;
};

// Seeded Gaussian init helpers shared by model and tests.
Matrix randn(std::mt19937_64& rng, int rows, int cols, double stddev);

}  // namespace echoplan::ad
