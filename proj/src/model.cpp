#include "echoplan/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace echoplan::model {

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0xA24BAED4963EE407ULL);
  ParamStore p;
  auto dense = [&](const std::string& name, int rows, int cols) {
    p.insert(name, ad::randn(rng, rows, cols, 1.0 / std::sqrt(static_cast<double>(rows))));
  };
  auto zeros = [&](const std::string& name, int rows, int cols) {
    p.insert(name, Matrix::Zero(rows, cols));
  };
  auto near_identity = [&](const std::string& name, int n) {
    p.insert(name, Matrix::Identity(n, n) + ad::randn(rng, n, n, 0.02));
  };

  dense("enc.lift_w", cfg.k_sem, cfg.k);
  zeros("enc.lift_b", 1, cfg.k);
  near_identity("enc.mix1_w", cfg.w);
  near_identity("enc.mix1_h", cfg.h);
  dense("enc.w2", cfg.k, cfg.k);
  zeros("enc.b2", 1, cfg.k);
  near_identity("enc.mix2_w", cfg.w);
  near_identity("enc.mix2_h", cfg.h);

  p.insert("cmd.embed", ad::randn(rng, cfg.n_c, cfg.k, 0.1));

  dense("tl.score_w", cfg.k, cfg.n_s);
  zeros("tl.score_b", 1, cfg.n_s);

  for (int l = 0; l < cfg.sa_layers; ++l) {
    std::string pre = "sa" + std::to_string(l) + ".";
    dense(pre + "wq", cfg.k, cfg.k);
    dense(pre + "wk", cfg.k, cfg.k);
    dense(pre + "wv", cfg.k, cfg.k);
    dense(pre + "wo", cfg.k, cfg.k);
  }

  dense("mln.w1", 2 * cfg.n_t, cfg.mln_hidden);
  zeros("mln.b1", 1, cfg.mln_hidden);
  p.insert("mln.gamma_w", ad::randn(rng, cfg.mln_hidden, cfg.k, 0.1));
  p.insert("mln.gamma_b", Matrix::Ones(1, cfg.k));
  p.insert("mln.delta_w", ad::randn(rng, cfg.mln_hidden, cfg.k, 0.1));
  zeros("mln.delta_b", 1, cfg.k);

  dense("tf.pos_q", cfg.cells(), cfg.k);
  dense("tf.out_w", cfg.k, cfg.k);
  zeros("tf.out_b", 1, cfg.k);

  p.insert("plan.queries", ad::randn(rng, cfg.n_c * cfg.n_t, cfg.k, 0.3));
  dense("plan.wq", cfg.k, cfg.k);
  dense("plan.wk", cfg.k, cfg.k);
  dense("plan.wv", cfg.k, cfg.k);
  dense("plan.wo", cfg.k, cfg.k);
  dense("plan.head_w1", cfg.k, cfg.k);
  zeros("plan.head_b1", 1, cfg.k);
  p.insert("plan.head_w2", ad::randn(rng, cfg.k, 2, 0.05));
  zeros("plan.head_b2", 1, 2);
  return p;
}

Matrix raster_to_matrix(const world::SemanticRaster& raster) {
  Matrix m(static_cast<Eigen::Index>(raster.h) * raster.w, world::GridSpec::k_sem);
  for (int r = 0; r < raster.h; ++r)
    for (int c = 0; c < raster.w; ++c)
      for (int ch = 0; ch < world::GridSpec::k_sem; ++ch)
        m(static_cast<Eigen::Index>(r) * raster.w + c, ch) = raster.at(r, c, ch);
  return m;
}

Var Model::param(Tape& tape, const std::string& name) const { return tape.param(params_, name); }

void Model::check_bev_shape(const Matrix& m, int expect_cols, const char* op) const {
  if (m.rows() != cfg_.cells() || m.cols() != expect_cols)
    throw std::invalid_argument(std::string(op) + ": expected " + std::to_string(cfg_.cells()) + "x" +
                                std::to_string(expect_cols) + ", got " + std::to_string(m.rows()) + "x" +
                                std::to_string(m.cols()));
}

Var Model::encode_bev(Tape& tape, Var raster) const {
  trace_.push_back("encode_bev");
  check_bev_shape(raster.value(), cfg_.k_sem, "encode_bev");

  // Permutation flipping the flat (row*w + col) index to (col*h + row).
  std::vector<int> to_colmajor(cfg_.cells());
  for (int r = 0; r < cfg_.h; ++r)
    for (int c = 0; c < cfg_.w; ++c) to_colmajor[c * cfg_.h + r] = r * cfg_.w + c;
  std::vector<int> to_rowmajor(cfg_.cells());
  for (int i = 0; i < cfg_.cells(); ++i) to_rowmajor[to_colmajor[i]] = i;

  auto mix = [&](Var x, const std::string& w_name, const std::string& h_name) {
    Var mw = tape.blockdiag_matmul(param(tape, w_name), x, cfg_.h);
    Var t = tape.permute_rows(mw, to_colmajor);
    Var mh = tape.blockdiag_matmul(param(tape, h_name), t, cfg_.w);
    return tape.permute_rows(mh, to_rowmajor);
  };

  Var x1 = tape.add_row(tape.matmul(raster, param(tape, "enc.lift_w")), param(tape, "enc.lift_b"));
  Var y1 = tape.tanh(mix(x1, "enc.mix1_w", "enc.mix1_h"));
  Var x2 = tape.add_row(tape.matmul(y1, param(tape, "enc.w2")), param(tape, "enc.b2"));
  return tape.tanh(mix(x2, "enc.mix2_w", "enc.mix2_h"));
}

Var Model::encode_command(Tape& tape, Command command, Var bev) const {
  trace_.push_back("encode_command");
  Var embed = tape.rows(param(tape, "cmd.embed"), branch_index(command), 1);
  return tape.add_row(bev, embed);
}

Var Model::token_learn_alpha(Tape& tape, Var bev) const {
  Var logits = tape.add_row(tape.matmul(bev, param(tape, "tl.score_w")), param(tape, "tl.score_b"));
  return tape.softmax_cols(logits);  // cells x n_s, each column a distribution over cells
}

Var Model::token_learn(Tape& tape, Var bev) const {
  trace_.push_back("token_learn");
  check_bev_shape(bev.value(), cfg_.k, "token_learn");
  Var alpha = token_learn_alpha(tape, bev);
  return tape.matmul(tape.transpose(alpha), bev);  // n_s x k
}

Var Model::mha(Tape& tape, Var queries, Var keys_values, const std::string& prefix) const {
  int dk = cfg_.k / cfg_.heads;
  Var q = tape.matmul(queries, param(tape, prefix + "wq"));
  Var kk = tape.matmul(keys_values, param(tape, prefix + "wk"));
  Var v = tape.matmul(keys_values, param(tape, prefix + "wv"));
  std::vector<Var> heads;
  for (int h = 0; h < cfg_.heads; ++h) {
    Var qh = tape.cols(q, h * dk, dk);
    Var kh = tape.cols(kk, h * dk, dk);
    Var vh = tape.cols(v, h * dk, dk);
    Var att = tape.softmax_rows(tape.scale(tape.matmul(qh, tape.transpose(kh)), 1.0 / std::sqrt(dk)));
    attn_probe_.push_back(att);
    heads.push_back(tape.matmul(att, vh));
  }
  return tape.matmul(tape.hconcat(heads), param(tape, prefix + "wo"));
}

Var Model::self_attention_refine(Tape& tape, Var tokens) const {
  trace_.push_back("self_attention_refine");
  Var x = tokens;
  for (int l = 0; l < cfg_.sa_layers; ++l) {
    Var att = mha(tape, x, x, "sa" + std::to_string(l) + ".");
    x = tape.layernorm_rows(tape.add(x, att), cfg_.ln_eps);
  }
  return x;
}

Var Model::mln(Tape& tape, Var tokens, Var trajectory) const {
  trace_.push_back("mln");
  if (trajectory.value().rows() != cfg_.n_t || trajectory.value().cols() != 2)
    throw std::invalid_argument("mln: trajectory must be n_t x 2");
  Var normed = tape.layernorm_rows(tokens, cfg_.ln_eps);
  Var flat = tape.flatten_row(trajectory);
  Var hidden = tape.tanh(tape.add_row(tape.matmul(flat, param(tape, "mln.w1")), param(tape, "mln.b1")));
  Var gamma = tape.add_row(tape.matmul(hidden, param(tape, "mln.gamma_w")), param(tape, "mln.gamma_b"));
  Var delta = tape.add_row(tape.matmul(hidden, param(tape, "mln.delta_w")), param(tape, "mln.delta_b"));
  return tape.add_row(tape.mul_row(normed, gamma), delta);
}

Var Model::token_fuse(Tape& tape, Var tokens) const {
  trace_.push_back("token_fuse");
  if (tokens.value().rows() != cfg_.n_s || tokens.value().cols() != cfg_.k)
    throw std::invalid_argument("token_fuse: tokens must be n_s x k");
  Var logits = tape.scale(tape.matmul(param(tape, "tf.pos_q"), tape.transpose(tokens)),
                          1.0 / std::sqrt(static_cast<double>(cfg_.k)));
  Var beta = tape.softmax_rows(logits);  // cells x n_s, row-stochastic
  attn_probe_.push_back(beta);
  Var mixed = tape.matmul(beta, tokens);
  return tape.add_row(tape.matmul(mixed, param(tape, "tf.out_w")), param(tape, "tf.out_b"));
}

Var Model::plan(Tape& tape, Var tokens) const {
  trace_.push_back("plan");
  Var queries = param(tape, "plan.queries");
  Var att = mha(tape, queries, tokens, "plan.");
  Var x = tape.layernorm_rows(tape.add(queries, att), cfg_.ln_eps);
  Var h = tape.tanh(tape.add_row(tape.matmul(x, param(tape, "plan.head_w1")), param(tape, "plan.head_b1")));
  return tape.add_row(tape.matmul(h, param(tape, "plan.head_w2")), param(tape, "plan.head_b2"));
}

Var Model::select_branch(Tape& tape, Var multi, Command command) const {
  trace_.push_back("select_branch");
  return tape.rows(multi, branch_index(command) * cfg_.n_t, cfg_.n_t);
}

Var traj_loss(Tape& tape, Var pred, Var gt) {
  if (pred.value().rows() != gt.value().rows() || pred.value().cols() != gt.value().cols())
    throw std::invalid_argument("traj_loss: shape mismatch");
  return tape.mean_abs(tape.sub(pred, gt));
}

Var bev_mse(Tape& tape, Var pred, Var target) {
  if (pred.value().rows() != target.value().rows() || pred.value().cols() != target.value().cols())
    throw std::invalid_argument("bev loss: shape mismatch");
  return tape.mean_sq(tape.sub(pred, target));
}

// --- Checkpoint tensor file ---

namespace {
constexpr char kMagic[4] = {'E', 'P', 'C', 'K'};
}

void save_tensor_file(const std::string& path, const std::vector<std::pair<std::string, const ParamStore*>>& groups,
                      const std::string& manifest_json) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out.write(kMagic, 4);
  std::uint64_t mlen = manifest_json.size();
  out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
  out.write(manifest_json.data(), static_cast<std::streamsize>(mlen));
  for (const auto& [prefix, store] : groups) {
    for (const auto& [name, tensor] : store->tensors) {
      std::string full = prefix + name;
      std::uint32_t nlen = static_cast<std::uint32_t>(full.size());
      out.write(reinterpret_cast<const char*>(&nlen), sizeof(nlen));
      out.write(full.data(), nlen);
      std::uint32_t rows = static_cast<std::uint32_t>(tensor.rows());
      std::uint32_t cols = static_cast<std::uint32_t>(tensor.cols());
      out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
      out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
      for (Eigen::Index r = 0; r < tensor.rows(); ++r)
        for (Eigen::Index c = 0; c < tensor.cols(); ++c) {
          float v = static_cast<float>(tensor(r, c));
          out.write(reinterpret_cast<const char*>(&v), sizeof(v));
        }
    }
  }
}

void load_tensor_file(const std::string& path, const std::vector<std::pair<std::string, ParamStore*>>& groups,
                      std::string* manifest_json) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("malformed checkpoint: bad magic");
  std::uint64_t mlen = 0;
  in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
  std::string manifest(mlen, '\0');
  in.read(manifest.data(), static_cast<std::streamsize>(mlen));
  if (!in) throw std::runtime_error("malformed checkpoint: manifest truncated");
  if (manifest_json) *manifest_json = manifest;

  for (auto& [prefix, store] : groups) store->tensors.clear();
  while (true) {
    std::uint32_t nlen = 0;
    in.read(reinterpret_cast<char*>(&nlen), sizeof(nlen));
    if (in.eof()) break;
    if (!in || nlen > 4096) throw std::runtime_error("malformed checkpoint: tensor name");
    std::string full(nlen, '\0');
    in.read(full.data(), nlen);
    std::uint32_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), sizeof(rows));
    in.read(reinterpret_cast<char*>(&cols), sizeof(cols));
    if (!in) throw std::runtime_error("malformed checkpoint: tensor dims for " + full);
    Matrix tensor(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c) {
        float v;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        if (!in) throw std::runtime_error("malformed checkpoint: payload truncated for " + full);
        tensor(r, c) = v;
      }
    bool placed = false;
    for (auto& [prefix, store] : groups) {
      if (full.rfind(prefix, 0) == 0) {
        store->insert(full.substr(prefix.size()), std::move(tensor));
        placed = true;
        break;
      }
    }
    if (!placed) throw std::runtime_error("malformed checkpoint: unknown tensor group for " + full);
  }
}

}  // namespace echoplan::model
