#include "attnlab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace attnlab {

int numerical_rank(const Mat& m, double cutoff) {
  if (m.size() == 0) return 0;
  Eigen::BDCSVD<Mat> svd(m);
  const Vec& s = svd.singularValues();
  return static_cast<int>((s.array() > cutoff).count());
}

EmbeddingTable::EmbeddingTable(Mat E, EmbeddingKind kind) : E_(std::move(E)), kind_(kind) {
  if (E_.rows() < 1 || E_.cols() < 1) throw Error(ErrorKind::InvalidDims, "embedding table is empty");
  if (!E_.allFinite()) throw Error(ErrorKind::InvalidDims, "embedding table has non-finite entries");
  for (int k = 0; k < K(); ++k) {
    const double nrm = E_.row(k).norm();
    if (std::abs(nrm - 1.0) > 1e-12)
      throw Error(ErrorKind::InvalidDims, "row " + std::to_string(k) + " is not unit norm");
    e_max_ = std::max(e_max_, nrm);
  }
  if (kind_ == EmbeddingKind::Orthonormal) {
    if (K() > d()) throw Error(ErrorKind::InvalidDims, "orthonormal table needs K <= d");
    if (!is_orthonormal()) throw Error(ErrorKind::InvalidDims, "rows are not orthonormal");
  }
  rank_ = numerical_rank(E_);
}

bool EmbeddingTable::is_orthonormal() const {
  if (K() > d()) return false;
  const Mat G = E_ * E_.transpose();
  return (G - Mat::Identity(K(), K())).cwiseAbs().maxCoeff() <= 1e-10;
}

double ClassifierHead::max_row_norm() const { return C.rowwise().norm().maxCoeff(); }

bool Sample::realizable() const {
  return std::find(tokens.begin(), tokens.end(), label) != tokens.end();
}

int Dataset::T_max() const {
  int t = 0;
  for (const auto& s : samples) t = std::max(t, s.length());
  return t;
}

int Dataset::non_realizable_count() const {
  return static_cast<int>(std::count_if(samples.begin(), samples.end(),
                                        [](const Sample& s) { return !s.realizable(); }));
}

Mat Dataset::X(int i) const { return embedding.E()(samples[i].tokens, Eigen::all); }

namespace {

Mat gaussian(int rows, int cols, Rng& rng) {
  Mat G(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) G(r, c) = rng.normal();
  return G;
}

}  // namespace

EmbeddingTable make_embeddings(int K, int d, EmbeddingKind kind, std::uint64_t seed) {
  if (K < 1 || d < 1) throw Error(ErrorKind::InvalidDims, "K and d must be positive");
  Rng root(seed);
  if (kind == EmbeddingKind::Orthonormal) {
    if (K > d) throw Error(ErrorKind::InvalidDims, "orthonormal embeddings need K <= d");
    Rng rng = root.split(0);
    const Mat G = gaussian(d, K, rng);
    Eigen::HouseholderQR<Mat> qr(G);
    Mat Q = qr.householderQ() * Mat::Identity(d, K);
    Mat E = Q.transpose();
    E.rowwise().normalize();
    return EmbeddingTable(std::move(E), kind);
  }
  // K > d cannot be full row rank; only the column rank is checked then.
  const int want = std::min(K, d);
  for (int attempt = 0; attempt < 16; ++attempt) {
    Rng rng = root.split(static_cast<std::uint64_t>(attempt));
    Mat E = gaussian(K, d, rng);
    E.rowwise().normalize();
    if (numerical_rank(E) == want) return EmbeddingTable(std::move(E), kind);
  }
  throw Error(ErrorKind::RankDeficient, "unit-sphere draw stayed rank deficient after 16 attempts");
}

namespace {

double argmax_margin(const Mat& C, const Mat& E) {
  const Mat S = C * E.transpose();
  double margin = std::numeric_limits<double>::infinity();
  for (int y = 0; y < S.rows(); ++y) {
    for (int k = 0; k < S.cols(); ++k)
      if (k != y) margin = std::min(margin, S(y, y) - S(y, k));
  }
  return margin;
}

}  // namespace

ClassifierHead make_head(const EmbeddingTable& E, HeadKind kind, double noise, std::uint64_t seed) {
  if (!E.full_row_rank()) throw Error(ErrorKind::RankDeficient, "head needs a full row rank embedding");
  ClassifierHead tied;
  tied.kind = HeadKind::Tied;
  if (E.kind() == EmbeddingKind::Orthonormal) {
    tied.C = E.E();
  } else {
    const Mat G = E.E() * E.E().transpose();
    tied.C = G.ldlt().solve(E.E());
  }
  if (kind == HeadKind::Tied) return tied;

  Rng root(seed);
  for (int attempt = 0; attempt < 64; ++attempt) {
    Rng rng = root.split(static_cast<std::uint64_t>(attempt));
    ClassifierHead h;
    h.kind = HeadKind::GeneralArgmax;
    h.C = tied.C + noise * gaussian(E.K(), E.d(), rng);
    const Vec diag = (h.C * E.E().transpose()).diagonal();
    if (diag.minCoeff() <= 0.0) continue;
    h.C = diag.cwiseInverse().asDiagonal() * h.C;
    if (E.K() == 1 || argmax_margin(h.C, E.E()) >= 1e-6) return h;
  }
  throw Error(ErrorKind::ArgmaxUnreachable, "no head with a strict argmax after 64 draws");
}

Dataset gen_dataset(const EmbeddingTable& E, std::optional<ClassifierHead> head, int n, int T,
                    GenMode mode, std::uint64_t seed) {
  if (n < 1 || T < 1) throw Error(ErrorKind::InvalidDims, "n and T must be positive");
  Rng rng(seed);
  const int K = E.K();
  std::vector<int> priority(K);
  if (mode == GenMode::Acyclic) {
    std::iota(priority.begin(), priority.end(), 0);
    std::shuffle(priority.begin(), priority.end(), rng.engine());
  }
  Dataset ds{E, std::move(head), {}, seed};
  ds.samples.reserve(n);
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.tokens.resize(T);
    for (auto& t : s.tokens) t = static_cast<TokenId>(rng.index(K));
    if (mode == GenMode::Cyclic) {
      s.label = s.tokens[rng.index(T)];
    } else {
      s.label = *std::max_element(s.tokens.begin(), s.tokens.end(),
                                  [&](TokenId a, TokenId b) { return priority[a] < priority[b]; });
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void validate(const Dataset& ds) {
  const int K = ds.embedding.K();
  const auto fail = [](const std::string& path, const std::string& msg) {
    throw Error(ErrorKind::SchemaViolation, path + ": " + msg);
  };
  if (ds.samples.empty()) fail("samples", "dataset has no samples");
  if (ds.head) {
    if (ds.head->C.rows() != K || ds.head->C.cols() != ds.embedding.d()) fail("head.C", "shape must be K x d");
    if (!ds.head->C.allFinite()) fail("head.C", "non-finite entries");
  }
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const Sample& s = ds.samples[i];
    const std::string at = "samples[" + std::to_string(i) + "]";
    if (s.tokens.empty()) fail(at + ".tokens", "empty sequence");
    for (std::size_t t = 0; t < s.tokens.size(); ++t) {
      if (s.tokens[t] < 0 || s.tokens[t] >= K)
        fail(at + ".tokens[" + std::to_string(t) + "]", "token id " + std::to_string(s.tokens[t]) + " out of range");
    }
    if (s.label < 0 || s.label >= K) fail(at + ".label", "label out of range");
    if (s.query_override && (*s.query_override < 0 || *s.query_override >= K)) fail(at + ".query", "out of range");
  }
}

const char* to_string(EmbeddingKind k) { return k == EmbeddingKind::Orthonormal ? "orthonormal" : "unit_sphere"; }
const char* to_string(HeadKind k) { return k == HeadKind::Tied ? "tied" : "general_argmax"; }
const char* to_string(GenMode m) { return m == GenMode::Cyclic ? "cyclic" : "acyclic"; }

}  // namespace attnlab
