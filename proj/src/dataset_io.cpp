#include "attnlab/json_io.hpp"

#include <fstream>
#include <sstream>

namespace attnlab {

namespace {

[[noreturn]] void schema(const std::string& path, const std::string& msg) {
  throw Error(ErrorKind::SchemaViolation, path + ": " + msg);
}

const Json& field(const Json& j, const char* key, const std::string& path) {
  if (!j.is_object()) schema(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) schema(path.empty() ? key : path + "." + key, "missing field");
  return *it;
}

int as_int(const Json& j, const std::string& path) {
  if (!j.is_number_integer()) schema(path, "expected an integer");
  return j.get<int>();
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

}  // namespace

Json matrix_to_json(const Mat& m) {
  Json rows = Json::array();
  for (int r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Mat matrix_from_json(const Json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) schema(path, "expected a non-empty array of rows");
  const auto rows = static_cast<int>(j.size());
  if (!j[0].is_array()) schema(path + "[0]", "expected an array");
  const auto cols = static_cast<int>(j[0].size());
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const std::string rp = path + "[" + std::to_string(r) + "]";
    if (!j[r].is_array() || static_cast<int>(j[r].size()) != cols) schema(rp, "row length mismatch");
    for (int c = 0; c < cols; ++c) {
      if (!j[r][c].is_number()) schema(rp + "[" + std::to_string(c) + "]", "expected a number");
      m(r, c) = j[r][c].get<double>();
    }
  }
  return m;
}

Json dataset_to_json(const Dataset& ds) {
  Json j;
  j["K"] = ds.embedding.K();
  j["d"] = ds.embedding.d();
  j["kind"] = to_string(ds.embedding.kind());
  j["embeddings"] = matrix_to_json(ds.embedding.E());
  if (ds.head) {
    j["head"] = {{"kind", to_string(ds.head->kind)}, {"C", matrix_to_json(ds.head->C)}};
  } else {
    j["head"] = nullptr;
  }
  Json samples = Json::array();
  for (const auto& s : ds.samples) {
    Json js{{"tokens", s.tokens}, {"label", s.label}};
    if (s.query_override) js["query"] = *s.query_override;
    samples.push_back(std::move(js));
  }
  j["samples"] = std::move(samples);
  j["seed"] = ds.seed;
  return j;
}

Dataset dataset_from_json(const Json& j) {
  const int K = as_int(field(j, "K", ""), "K");
  const int d = as_int(field(j, "d", ""), "d");
  const Json& jk = field(j, "kind", "");
  EmbeddingKind kind;
  if (jk == "orthonormal") {
    kind = EmbeddingKind::Orthonormal;
  } else if (jk == "unit_sphere") {
    kind = EmbeddingKind::UnitSphere;
  } else {
    schema("kind", "expected \"orthonormal\" or \"unit_sphere\"");
  }
  Mat E = matrix_from_json(field(j, "embeddings", ""), "embeddings");
  if (E.rows() != K || E.cols() != d) schema("embeddings", "shape must be K x d");
  std::optional<EmbeddingTable> table;
  try {
    table.emplace(std::move(E), kind);
  } catch (const Error& e) {
    schema("embeddings", e.what());
  }

  std::optional<ClassifierHead> head;
  if (auto it = j.find("head"); it != j.end() && !it->is_null()) {
    ClassifierHead h;
    const Json& hk = field(*it, "kind", "head");
    if (hk == "tied") {
      h.kind = HeadKind::Tied;
    } else if (hk == "general_argmax") {
      h.kind = HeadKind::GeneralArgmax;
    } else {
      schema("head.kind", "expected \"tied\" or \"general_argmax\"");
    }
    h.C = matrix_from_json(field(*it, "C", "head"), "head.C");
    head = std::move(h);
  }

  const Json& js = field(j, "samples", "");
  if (!js.is_array()) schema("samples", "expected an array");
  std::vector<Sample> samples;
  samples.reserve(js.size());
  for (std::size_t i = 0; i < js.size(); ++i) {
    const std::string at = "samples[" + std::to_string(i) + "]";
    const Json& tj = field(js[i], "tokens", at);
    if (!tj.is_array()) schema(join(at, "tokens"), "expected an array");
    Sample s;
    for (std::size_t t = 0; t < tj.size(); ++t)
      s.tokens.push_back(as_int(tj[t], at + ".tokens[" + std::to_string(t) + "]"));
    s.label = as_int(field(js[i], "label", at), join(at, "label"));
    if (auto q = js[i].find("query"); q != js[i].end()) s.query_override = as_int(*q, join(at, "query"));
    samples.push_back(std::move(s));
  }
  std::uint64_t seed = 0;
  if (auto it = j.find("seed"); it != j.end()) {
    if (!it->is_number_unsigned() && !it->is_number_integer()) schema("seed", "expected an integer");
    seed = it->get<std::uint64_t>();
  }
  Dataset ds{std::move(*table), std::move(head), std::move(samples), seed};
  validate(ds);
  return ds;
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorKind::SchemaViolation, path + ": " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path);
}

void write_json_file(const std::string& path, const Json& j) { write_text_file(path, j.dump(2) + "\n"); }

void save_dataset(const Dataset& ds, const std::string& path) { write_json_file(path, dataset_to_json(ds)); }

Dataset load_dataset(const std::string& path) { return dataset_from_json(read_json_file(path)); }

}  // namespace attnlab
