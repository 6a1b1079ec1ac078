#include "faithmt/checkpoint.hpp"

#include <fstream>

namespace faithmt {

namespace {

using nlohmann::ordered_json;

ordered_json matrix_to_json(const Matrix& m) {
  ordered_json rows = ordered_json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

ordered_json vector_to_json(const Vector& v) {
  ordered_json arr = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Matrix matrix_from_json(const ordered_json& j, Eigen::Index rows, Eigen::Index cols,
                        const std::string& name) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) {
    throw IoError("checkpoint field " + name + " has wrong row count");
  }
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j[i];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw IoError("checkpoint field " + name + " has wrong column count");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = row[c].get<double>();
  }
  if (!m.allFinite()) throw IoError("checkpoint field " + name + " contains non-finite values");
  return m;
}

Vector vector_from_json(const ordered_json& j, Eigen::Index size, const std::string& name) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != size) {
    throw IoError("checkpoint field " + name + " has wrong length");
  }
  Vector v(size);
  for (Eigen::Index i = 0; i < size; ++i) v[i] = j[i].get<double>();
  if (!v.allFinite()) throw IoError("checkpoint field " + name + " contains non-finite values");
  return v;
}

}  // namespace

ordered_json checkpoint_to_json(const Parameters& params) {
  const ModelConfig& c = params.config;
  ordered_json doc;
  doc["format_version"] = 1;
  doc["config"] = {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},
                   {"n_heads", c.n_heads},       {"d_ff", c.d_ff},
                   {"n_layers", c.n_layers},     {"max_seq_len", c.max_seq_len},
                   {"seed", c.seed}};
  doc["seed"] = c.seed;
  ordered_json p;
  p["tok_emb"] = matrix_to_json(params.tok_emb);
  p["pos_emb"] = matrix_to_json(params.pos_emb);
  ordered_json layers = ordered_json::array();
  for (const LayerParams& lp : params.layers) {
    ordered_json l;
    l["w_q"] = matrix_to_json(lp.w_q);
    l["w_k"] = matrix_to_json(lp.w_k);
    l["w_v"] = matrix_to_json(lp.w_v);
    l["w_o"] = matrix_to_json(lp.w_o);
    l["b_o"] = vector_to_json(lp.b_o);
    l["ln1_gamma"] = vector_to_json(lp.ln1_gamma);
    l["ln1_beta"] = vector_to_json(lp.ln1_beta);
    l["w_ff1"] = matrix_to_json(lp.w_ff1);
    l["b_ff1"] = vector_to_json(lp.b_ff1);
    l["w_ff2"] = matrix_to_json(lp.w_ff2);
    l["b_ff2"] = vector_to_json(lp.b_ff2);
    l["ln2_gamma"] = vector_to_json(lp.ln2_gamma);
    l["ln2_beta"] = vector_to_json(lp.ln2_beta);
    layers.push_back(std::move(l));
  }
  p["layers"] = std::move(layers);
  p["w_out"] = matrix_to_json(params.w_out);
  doc["parameters"] = std::move(p);
  return doc;
}

Parameters checkpoint_from_json(const ordered_json& doc) {
  if (!doc.contains("format_version") || doc["format_version"].get<int>() != 1) {
    throw IoError("unsupported checkpoint format_version");
  }
  const auto& jc = doc.at("config");
  ModelConfig cfg;
  cfg.vocab_size = jc.at("vocab_size").get<int>();
  cfg.d_model = jc.at("d_model").get<int>();
  cfg.n_heads = jc.at("n_heads").get<int>();
  cfg.d_ff = jc.at("d_ff").get<int>();
  cfg.n_layers = jc.at("n_layers").get<int>();
  cfg.max_seq_len = jc.at("max_seq_len").get<int>();
  cfg.seed = jc.at("seed").get<uint64_t>();
  cfg.validate();

  Parameters params;
  params.config = cfg;
  const auto& p = doc.at("parameters");
  params.tok_emb = matrix_from_json(p.at("tok_emb"), cfg.vocab_size, cfg.d_model, "tok_emb");
  params.pos_emb = matrix_from_json(p.at("pos_emb"), cfg.max_seq_len, cfg.d_model, "pos_emb");
  const auto& layers = p.at("layers");
  if (static_cast<int>(layers.size()) != cfg.n_layers) {
    throw IoError("checkpoint layer count does not match config");
  }
  params.layers.resize(cfg.n_layers);
  for (int i = 0; i < cfg.n_layers; ++i) {
    const auto& l = layers[i];
    LayerParams& lp = params.layers[i];
    lp.w_q = matrix_from_json(l.at("w_q"), cfg.d_model, cfg.d_model, "w_q");
    lp.w_k = matrix_from_json(l.at("w_k"), cfg.d_model, cfg.d_model, "w_k");
    lp.w_v = matrix_from_json(l.at("w_v"), cfg.d_model, cfg.d_model, "w_v");
    lp.w_o = matrix_from_json(l.at("w_o"), cfg.d_model, cfg.d_model, "w_o");
    lp.b_o = vector_from_json(l.at("b_o"), cfg.d_model, "b_o");
    lp.ln1_gamma = vector_from_json(l.at("ln1_gamma"), cfg.d_model, "ln1_gamma");
    lp.ln1_beta = vector_from_json(l.at("ln1_beta"), cfg.d_model, "ln1_beta");
    lp.w_ff1 = matrix_from_json(l.at("w_ff1"), cfg.d_model, cfg.d_ff, "w_ff1");
    lp.b_ff1 = vector_from_json(l.at("b_ff1"), cfg.d_ff, "b_ff1");
    lp.w_ff2 = matrix_from_json(l.at("w_ff2"), cfg.d_ff, cfg.d_model, "w_ff2");
    lp.b_ff2 = vector_from_json(l.at("b_ff2"), cfg.d_model, "b_ff2");
    lp.ln2_gamma = vector_from_json(l.at("ln2_gamma"), cfg.d_model, "ln2_gamma");
    lp.ln2_beta = vector_from_json(l.at("ln2_beta"), cfg.d_model, "ln2_beta");
  }
  params.w_out = matrix_from_json(p.at("w_out"), cfg.d_model, cfg.vocab_size, "w_out");
  return params;
}

void save_checkpoint(const std::string& path, const Parameters& params) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open checkpoint file for writing: " + path);
  out << checkpoint_to_json(params).dump(1) << "\n";
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

Parameters load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint file: " + path);
  ordered_json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint " + path + ": " + e.what());
  }
  return checkpoint_from_json(doc);
}

}  // namespace faithmt
