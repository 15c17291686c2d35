#include "ncgm/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "ncgm/errors.hpp"

namespace ncgm {

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
  if (!value.requires_grad()) value = value.clone(true);
  index_[name] = params_.size();
  params_.push_back({name, std::move(value)});
  return params_.back().value;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return params_[it->second].value;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return params_[it->second].value;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& p : params_) out.add(p.name, p.value.clone(true));
  return out;
}

bool ParamStore::all_finite() const {
  for (const auto& p : params_)
    for (double v : p.value.data())
      if (!std::isfinite(v)) return false;
  return true;
}

bool ParamStore::same_values(const ParamStore& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& a = params_[i];
    const auto& b = other.params_[i];
    if (a.name != b.name || a.value.shape() != b.value.shape()) return false;
    if (std::memcmp(a.value.data().data(), b.value.data().data(), a.value.size() * sizeof(double)) != 0)
      return false;
  }
  return true;
}

std::map<std::string, Tensor> backward(const Tensor& loss, const ParamStore& params) {
  const auto g = grad(loss);
  std::map<std::string, Tensor> out;
  for (const auto& p : params.all()) out.emplace(p.name, g.of(p.value));
  return out;
}

Tensor uniform(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = dist(rng);
  return Tensor(std::move(shape), std::move(data), true);
}

Tensor glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform({fan_in, fan_out}, bound, rng);
}

void ParamBuilder::linear(const std::string& name, std::size_t in, std::size_t out, bool bias, double gain) {
  auto w = glorot(in, out, *rng_);
  if (gain != 1.0)
    for (auto& v : w.mutable_data()) v *= gain;
  store_->add(path(name + "/w"), std::move(w));
  if (bias) store_->add(path(name + "/b"), Tensor::zeros({out}, true));
}

void ParamBuilder::norm(const std::string& name, std::size_t width) {
  store_->add(path(name + "/gamma"), Tensor::full({width}, 1.0, true));
  store_->add(path(name + "/beta"), Tensor::zeros({width}, true));
}

void ParamBuilder::tensor(const std::string& name, Tensor value) { store_->add(path(name), std::move(value)); }

Tensor linear(const Tensor& x, const ParamScope& scope, const std::string& name) {
  Tensor y = matmul(x, scope[name + "/w"]);
  const auto bias = scope.path(name + "/b");
  if (scope.store().contains(bias)) y = add_bias(y, scope.store().get(bias));
  return y;
}

// ---- Checkpoints ------------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw DataError("truncated checkpoint: " + path.string());
  }
  return v;
}

}  // namespace

void save_checkpoint(const ParamStore& params, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint: " + path.string());
  os.write("NCGM", 4);
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(params.count()));
  for (const auto& p : params.all()) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.value.rank()));
    for (auto d : p.value.shape()) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(p.value.data().data()),
             static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  }
  if (!os) throw DataError("failed writing checkpoint: " + path.string());
}

ParamStore read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "NCGM", 4) != 0) {
    throw DataError("not an NCGM checkpoint: " + path.string());
  }
  const auto version = take<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = take<std::uint32_t>(is, path);
  ParamStore out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = take<std::uint32_t>(is, path);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw DataError("truncated checkpoint: " + path.string());
    const auto rank = take<std::uint32_t>(is, path);
    Shape shape(rank);
    for (auto& d : shape) d = take<std::uint64_t>(is, path);
    std::vector<double> data(shape_numel(shape));
    if (!is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)))) {
      throw DataError("truncated checkpoint: " + path.string());
    }
    out.add(name, Tensor(std::move(shape), std::move(data), true));
  }
  return out;
}

void load_checkpoint(ParamStore& params, const std::filesystem::path& path) {
  const auto loaded = read_checkpoint(path);
  if (loaded.count() != params.count()) {
    throw DataError("checkpoint has " + std::to_string(loaded.count()) + " parameters, model expects " +
                    std::to_string(params.count()));
  }
  for (auto& p : params.all()) {
    if (!loaded.contains(p.name)) throw DataError("checkpoint lacks parameter " + p.name);
    const auto& src = loaded.get(p.name);
    if (src.shape() != p.value.shape()) {
      throw DataError("shape mismatch for " + p.name + ": " + shape_str(src.shape()) + " vs " +
                      shape_str(p.value.shape()));
    }
    std::copy(src.data().begin(), src.data().end(), p.value.mutable_data().begin());
  }
}

// ---- Adam -------------------------------------------------------------------

Adam::Adam(const ParamStore& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params.all()) {
    m_[p.name].assign(p.value.size(), 0.0);
    v_[p.name].assign(p.value.size(), 0.0);
  }
}

void Adam::step(ParamStore& params, const std::map<std::string, Tensor>& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& p : params.all()) {
    auto it = grads.find(p.name);
    if (it == grads.end()) continue;
    auto g = it->second.data();
    auto w = p.value.mutable_data();
    auto& m = m_.at(p.name);
    auto& v = v_.at(p.name);
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

}  // namespace ncgm
