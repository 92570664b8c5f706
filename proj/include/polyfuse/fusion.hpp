#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "polyfuse/autodiff.hpp"
#include "polyfuse/tensor.hpp"

namespace polyfuse::fusion {

enum class Kind { Linear, Tensor, Polynomial };
enum class Path { Full, Factorized };

/// Upper bound on entries of any weight tensor built by a full path.
inline constexpr std::uint64_t kMaxMaterializedEntries = 10'000'000;

/// A full-path request whose dense weight tensor exceeds the materialization bound.
class GuardError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string to_string(Kind kind);
std::string to_string(Path path);
Kind parse_kind(const std::string& s);
Path parse_path(const std::string& s);

/// Fusion of three feature vectors of lengths (A, B, C) into O outputs.
///
/// `rank` applies to factorized tensor and polynomial fusion, `order` and
/// `symmetric` to polynomial fusion only. `augment_one` appends a constant 1
/// to the concatenated vector so a polynomial layer also sees every
/// lower-degree interaction; it is off by default.
struct FusionSpec {
  Kind kind = Kind::Polynomial;
  std::size_t dim_a = 120;
  std::size_t dim_b = 144;
  std::size_t dim_c = 144;
  std::size_t output_dim = 128;
  std::size_t rank = 16;
  std::size_t order = 1;
  bool symmetric = false;
  Path path = Path::Factorized;
  bool augment_one = false;

  /// Length of the concatenated vector seen by linear and polynomial fusion.
  std::size_t concat_dim() const;
  /// Entries of the dense weight tensor, saturating at UINT64_MAX.
  std::uint64_t dense_entries() const;
  /// Checks dimensions and, for the full path, the materialization bound.
  void validate() const;

  friend bool operator==(const FusionSpec&, const FusionSpec&) = default;
};

/// Exact number of learned scalars a layer built from `spec` allocates.
std::uint64_t param_count(const FusionSpec& spec);

// Reference computations on unbatched order-1 feature vectors.

/// y = concat(z1, z2, z3) . W with W: [A+B+C, O].
Tensor fuse_linear(const Tensor& z1, const Tensor& z2, const Tensor& z3, const Tensor& weight);
/// y_o = sum_abc z1_a z2_b z3_c W_abco.
Tensor fuse_tensor_full(const Tensor& z1, const Tensor& z2, const Tensor& z3, const Tensor& weight);
/// y_o = sum_r w_r (z1 F1)[r,o] (z2 F2)[r,o] (z3 F3)[r,o].
Tensor fuse_tensor_factorized(const Tensor& z1, const Tensor& z2, const Tensor& z3,
                              std::span<const Tensor> factors, const Tensor& rank_weights);
/// p-fold outer power of `z` contracted with W: [D, ..., D, O]; p = order(W) - 1.
Tensor fuse_polynomial_full(const Tensor& z, const Tensor& weight);
/// y_o = sum_r w_r prod_k (z F_k)[r,o]. A single factor with `order` > 1 is
/// the symmetric layout and is applied at every position.
Tensor fuse_polynomial_factorized(const Tensor& z, std::span<const Tensor> factors, const Tensor& rank_weights,
                                  std::size_t order);

/// W[i1..ip, o] = sum_r w_r prod_k F_k[i_k, r, o] for factors [D_k, R, O].
/// Testing utility; bounded by kMaxMaterializedEntries.
Tensor reconstruct_full(std::span<const Tensor> factors, const Tensor& rank_weights);
/// One entry of the reconstructed tensor without materializing it.
double reconstruct_entry(std::span<const Tensor> factors, const Tensor& rank_weights,
                         std::span<const std::size_t> index, std::size_t out);

/// Fusion layer whose parameters live in a shared store under `prefix`.
class FusionLayer {
 public:
  FusionLayer(FusionSpec spec, ParameterStore& store, std::string prefix, std::mt19937_64& rng);

  const FusionSpec& spec() const noexcept { return spec_; }
  const std::vector<std::string>& parameter_names() const noexcept { return names_; }

  /// Batched forward: [N, A], [N, B], [N, C] -> [N, O].
  Var forward(Tape& tape, const Var& z1, const Var& z2, const Var& z3) const;
  /// Unbatched convenience: order-1 features -> [O].
  Tensor apply(const Tensor& z1, const Tensor& z2, const Tensor& z3) const;

  /// Factor tensors in polynomial position order; a symmetric layer
  /// returns its shared factor once per position.
  std::vector<Tensor> position_factors() const;
  const Tensor& rank_weights() const;
  /// Dense weight tensor: stored directly for the full path, rebuilt from
  /// the factors otherwise.
  Tensor materialize() const;

 private:
  Parameter& param(const std::string& name) const;
  Var projection(Tape& tape, const Var& z, const std::string& factor) const;

  FusionSpec spec_;
  ParameterStore* store_;
  std::string prefix_;
  std::vector<std::string> names_;
};

}  // namespace polyfuse::fusion
