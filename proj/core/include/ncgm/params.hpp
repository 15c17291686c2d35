#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "ncgm/tensor.hpp"

namespace ncgm {

struct Parameter {
  std::string name;
  Tensor value;
};

/// Named learnable tensors, kept in registration order.
class ParamStore {
 public:
  /// Registers a new leaf. Throws ContractError on a duplicate name.
  Tensor& add(const std::string& name, Tensor value);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }
  std::size_t count() const { return params_.size(); }
  std::size_t scalar_count() const;

  /// Deep copy (new leaves, same names and values).
  ParamStore clone() const;
  bool all_finite() const;
  /// Bitwise equality of names, shapes and values.
  bool same_values(const ParamStore& other) const;

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

/// Read-only view of the parameters below one name prefix ("block1/ece/geometry").
class ParamScope {
 public:
  ParamScope(const ParamStore& store, std::string prefix) : store_(&store), prefix_(std::move(prefix)) {}
  const Tensor& operator[](const std::string& name) const { return store_->get(path(name)); }
  ParamScope sub(const std::string& name) const { return {*store_, path(name)}; }
  std::string path(const std::string& name) const { return prefix_.empty() ? name : prefix_ + "/" + name; }
  const ParamStore& store() const { return *store_; }

 private:
  const ParamStore* store_;
  std::string prefix_;
};

/// Registers freshly initialised parameters below a prefix.
class ParamBuilder {
 public:
  ParamBuilder(ParamStore& store, std::string prefix, std::mt19937_64& rng)
      : store_(&store), prefix_(std::move(prefix)), rng_(&rng) {}
  ParamBuilder sub(const std::string& name) const { return {*store_, path(name), *rng_}; }
  std::string path(const std::string& name) const { return prefix_.empty() ? name : prefix_ + "/" + name; }

  /// `name/w` [in x out] (Glorot times `gain`) and, when `bias`, `name/b` [out] (zeros).
  void linear(const std::string& name, std::size_t in, std::size_t out, bool bias = true, double gain = 1.0);
  /// `name/gamma` (ones) and `name/beta` (zeros).
  void norm(const std::string& name, std::size_t width);
  void tensor(const std::string& name, Tensor value);
  std::mt19937_64& rng() { return *rng_; }

 private:
  ParamStore* store_;
  std::string prefix_;
  std::mt19937_64* rng_;
};

/// x * w + b using the `name/w`, `name/b` pair of a scope (bias optional).
Tensor linear(const Tensor& x, const ParamScope& scope, const std::string& name);

/// Gradient of a scalar loss for every parameter in `params`; unreachable ones get zeros.
std::map<std::string, Tensor> backward(const Tensor& loss, const ParamStore& params);

/// Glorot-uniform initialised matrix.
Tensor glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);
Tensor uniform(Shape shape, double bound, std::mt19937_64& rng);

// Flat binary checkpoint: "NCGM", u32 version, u32 count, then per parameter
// u32 name length, name bytes, u32 rank, u64 dims, little-endian f64 payload.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ParamStore& params, const std::filesystem::path& path);
/// Reads a checkpoint into a fresh store.
ParamStore read_checkpoint(const std::filesystem::path& path);
/// Overwrites values of `params` from a checkpoint; names and shapes must match exactly.
void load_checkpoint(ParamStore& params, const std::filesystem::path& path);

/// Adaptive moment estimation with bias correction.
class Adam {
 public:
  explicit Adam(const ParamStore& params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(ParamStore& params, const std::map<std::string, Tensor>& grads, double lr);
  std::uint64_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

}  // namespace ncgm
