#pragma once

#include "attnlab/rng.hpp"
#include "attnlab/types.hpp"

#include <optional>
#include <string>
#include <vector>

namespace attnlab {

enum class EmbeddingKind { Orthonormal, UnitSphere };
enum class HeadKind { Tied, GeneralArgmax };
enum class GenMode { Cyclic, Acyclic };

inline constexpr double kRankCutoff = 1e-10;

// Numerical rank via singular values with an absolute cutoff.
int numerical_rank(const Mat& m, double cutoff = kRankCutoff);

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  // Validates unit rows and, for Orthonormal, E Eᵀ = I.
  EmbeddingTable(Mat E, EmbeddingKind kind);

  int K() const { return static_cast<int>(E_.rows()); }
  int d() const { return static_cast<int>(E_.cols()); }
  const Mat& E() const { return E_; }
  auto row(TokenId k) const { return E_.row(k); }
  EmbeddingKind kind() const { return kind_; }
  double e_max() const { return e_max_; }
  int rank() const { return rank_; }
  bool full_row_rank() const { return rank_ == K(); }
  // E Eᵀ = I within 1e-10 (true for Orthonormal, may hold by accident otherwise).
  bool is_orthonormal() const;

 private:
  Mat E_;
  EmbeddingKind kind_ = EmbeddingKind::UnitSphere;
  double e_max_ = 0.0;
  int rank_ = 0;
};

struct ClassifierHead {
  Mat C;
  HeadKind kind = HeadKind::Tied;
  double max_row_norm() const;
};

struct Sample {
  std::vector<TokenId> tokens;
  TokenId label = 0;
  // Query token; the last token unless a reduced sequence dropped it.
  std::optional<TokenId> query_override;

  TokenId query() const { return query_override ? *query_override : tokens.back(); }
  int length() const { return static_cast<int>(tokens.size()); }
  bool realizable() const;
};

struct Dataset {
  EmbeddingTable embedding;
  // Absent head means masked scoring: the score is the softmax mass on label
  // occurrences, which is what a tied head computes when one exists.
  std::optional<ClassifierHead> head;
  std::vector<Sample> samples;
  std::uint64_t seed = 0;

  int n() const { return static_cast<int>(samples.size()); }
  int T_max() const;
  int non_realizable_count() const;
  // Scores are exact label indicators (tied head or masked scoring).
  bool indicator_scores() const { return !head || head->kind == HeadKind::Tied; }
  // X_i as a T×d matrix.
  Mat X(int i) const;
};

EmbeddingTable make_embeddings(int K, int d, EmbeddingKind kind, std::uint64_t seed);
ClassifierHead make_head(const EmbeddingTable& E, HeadKind kind, double noise, std::uint64_t seed);
Dataset gen_dataset(const EmbeddingTable& E, std::optional<ClassifierHead> head, int n, int T,
                    GenMode mode, std::uint64_t seed);

// Throws SchemaViolation on out-of-range tokens or shape mismatches.
void validate(const Dataset& ds);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

const char* to_string(EmbeddingKind k);
const char* to_string(HeadKind k);
const char* to_string(GenMode m);

}  // namespace attnlab
