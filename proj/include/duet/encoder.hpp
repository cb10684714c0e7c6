#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "duet/common.hpp"
#include "duet/corpus.hpp"
#include "duet/io.hpp"

namespace duet {

// Parameters live as 32-bit floats (checkpoints round-trip bitwise); all
// arithmetic widens to double.
struct EncoderConfig {
  int vocab_size = 0;
  int embed_dim = 64;
  int proj_dim = 256;
  std::uint64_t seed = 0;
  bool share_heads = true;

  void validate() const {
    if (vocab_size < 1 || embed_dim < 1 || proj_dim < 1)
      throw ValidationError("encoder dimensions must be >= 1");
  }
};

enum class Head { kFact, kDecision };

struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  std::size_t count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

// Token embedding -> mean pool over non-pad ids -> tanh -> projection head.
struct EncoderModel {
  EncoderConfig config;
  std::vector<float> embedding;  // [vocab_size][embed_dim]
  std::vector<float> fact_w;     // [embed_dim][proj_dim], row-major in->out
  std::vector<float> fact_b;     // [proj_dim]
  std::vector<float> decision_w;  // empty when share_heads
  std::vector<float> decision_b;
  std::map<std::string, Tensor> extras;  // e.g. fine-tuned classifier heads

  bool decision_is_fact(Head head) const {
    return head == Head::kFact || config.share_heads;
  }
  const std::vector<float>& head_w(Head head) const {
    return decision_is_fact(head) ? fact_w : decision_w;
  }
  const std::vector<float>& head_b(Head head) const {
    return decision_is_fact(head) ? fact_b : decision_b;
  }

  // Core parameter blocks in checkpoint order (extras not included).
  std::vector<std::span<float>> param_views() {
    std::vector<std::span<float>> views = {embedding, fact_w, fact_b};
    if (!config.share_heads) {
      views.emplace_back(decision_w);
      views.emplace_back(decision_b);
    }
    return views;
  }
};

// Additive accumulators aligned with EncoderModel::param_views(), held in
// double so many small contributions do not cancel at float precision.
struct EncoderGradients {
  std::vector<double> embedding, fact_w, fact_b, decision_w, decision_b;

  explicit EncoderGradients(const EncoderModel& model)
      : embedding(model.embedding.size(), 0.0),
        fact_w(model.fact_w.size(), 0.0),
        fact_b(model.fact_b.size(), 0.0),
        decision_w(model.decision_w.size(), 0.0),
        decision_b(model.decision_b.size(), 0.0) {}

  void zero() {
    auto wipe = [](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); };
    wipe(embedding);
    wipe(fact_w);
    wipe(fact_b);
    wipe(decision_w);
    wipe(decision_b);
  }

  std::vector<std::span<double>> views(bool share_heads) {
    std::vector<std::span<double>> views = {embedding, fact_w, fact_b};
    if (!share_heads) {
      views.emplace_back(decision_w);
      views.emplace_back(decision_b);
    }
    return views;
  }
};

inline EncoderModel init_params(const EncoderConfig& config) {
  config.validate();
  EncoderModel model;
  model.config = config;
  Rng rng(config.seed);
  auto draw = [&](std::vector<float>& dst, std::size_t n, int fan_in, int fan_out) {
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    dst.resize(n);
    for (auto& v : dst) v = static_cast<float>(rng.uniform(-a, a));
  };
  const auto vocab = static_cast<std::size_t>(config.vocab_size);
  const auto ed = static_cast<std::size_t>(config.embed_dim);
  const auto pd = static_cast<std::size_t>(config.proj_dim);
  draw(model.embedding, vocab * ed, config.vocab_size, config.embed_dim);
  draw(model.fact_w, ed * pd, config.embed_dim, config.proj_dim);
  model.fact_b.assign(pd, 0.0f);
  if (!config.share_heads) {
    draw(model.decision_w, ed * pd, config.embed_dim, config.proj_dim);
    model.decision_b.assign(pd, 0.0f);
  }
  return model;
}

namespace detail {

// Mean of non-pad token embeddings; returns the count pooled over.
inline std::size_t pooled_mean(const EncoderModel& model, const TokenSequence& seq,
                               std::vector<double>& mean) {
  const int ed = model.config.embed_dim;
  mean.assign(static_cast<std::size_t>(ed), 0.0);
  std::size_t count = 0;
  for (int id : seq.ids) {
    if (id == Vocabulary::kPad) continue;
    if (id < 0 || id >= model.config.vocab_size)
      throw ValidationError("token id out of range: " + std::to_string(id));
    const float* row = model.embedding.data() + static_cast<std::size_t>(id) * ed;
    for (int i = 0; i < ed; ++i) mean[static_cast<std::size_t>(i)] += row[i];
    ++count;
  }
  if (count == 0) throw ValidationError("cannot encode an empty sequence");
  for (auto& v : mean) v /= static_cast<double>(count);
  return count;
}

}  // namespace detail

inline std::vector<double> encode(const EncoderModel& model,
                                  const TokenSequence& seq, Head head) {
  const int ed = model.config.embed_dim;
  const int pd = model.config.proj_dim;
  std::vector<double> mean;
  detail::pooled_mean(model, seq, mean);
  const auto& w = model.head_w(head);
  const auto& b = model.head_b(head);
  std::vector<double> h(static_cast<std::size_t>(pd));
  for (int j = 0; j < pd; ++j) h[static_cast<std::size_t>(j)] = b[static_cast<std::size_t>(j)];
  for (int i = 0; i < ed; ++i) {
    const double t = std::tanh(mean[static_cast<std::size_t>(i)]);
    const float* wrow = w.data() + static_cast<std::size_t>(i) * pd;
    for (int j = 0; j < pd; ++j) h[static_cast<std::size_t>(j)] += t * wrow[j];
  }
  return h;
}

// Accumulates dLoss/dParams for the parameters touched by seq. Activations
// are recomputed here; sequences are short enough that caching buys nothing.
inline void encode_backward(const EncoderModel& model, const TokenSequence& seq,
                            Head head, std::span<const double> upstream,
                            EncoderGradients& grads) {
  const int ed = model.config.embed_dim;
  const int pd = model.config.proj_dim;
  if (upstream.size() != static_cast<std::size_t>(pd))
    throw ValidationError("upstream gradient has wrong dimension");

  std::vector<double> mean;
  const std::size_t count = detail::pooled_mean(model, seq, mean);
  std::vector<double> t(static_cast<std::size_t>(ed));
  for (int i = 0; i < ed; ++i) t[static_cast<std::size_t>(i)] = std::tanh(mean[static_cast<std::size_t>(i)]);

  const auto& w = model.head_w(head);
  const bool to_fact = model.decision_is_fact(head);
  auto& gw = to_fact ? grads.fact_w : grads.decision_w;
  auto& gb = to_fact ? grads.fact_b : grads.decision_b;

  // h_j = b_j + sum_i tanh(m_i) W_ij
  std::vector<double> dmean(static_cast<std::size_t>(ed), 0.0);
  for (int j = 0; j < pd; ++j) gb[static_cast<std::size_t>(j)] += upstream[static_cast<std::size_t>(j)];
  for (int i = 0; i < ed; ++i) {
    const float* wrow = w.data() + static_cast<std::size_t>(i) * pd;
    double* gwrow = gw.data() + static_cast<std::size_t>(i) * pd;
    double dt = 0.0;
    const double ti = t[static_cast<std::size_t>(i)];
    for (int j = 0; j < pd; ++j) {
      gwrow[j] += ti * upstream[static_cast<std::size_t>(j)];
      dt += wrow[j] * upstream[static_cast<std::size_t>(j)];
    }
    dmean[static_cast<std::size_t>(i)] = dt * (1.0 - ti * ti);
  }

  const double inv = 1.0 / static_cast<double>(count);
  for (int id : seq.ids) {
    if (id == Vocabulary::kPad) continue;
    double* grow = grads.embedding.data() + static_cast<std::size_t>(id) * ed;
    for (int i = 0; i < ed; ++i) grow[i] += dmean[static_cast<std::size_t>(i)] * inv;
  }
}

// --- checkpoint format ------------------------------------------------------
// magic "DUET" | u32 version | u32 vocab_size | u32 embed_dim | u32 proj_dim |
// u64 seed | u8 share_heads | u32 tensor_count | tensors.
// Tensor: u32 name_len | name | u32 rank | u32 dims[rank] | f32 data (LE).

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_tensor(std::string& out, const std::string& name,
                       std::span<const std::uint32_t> dims,
                       std::span<const float> data) {
  io::put_u32(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  io::put_u32(out, static_cast<std::uint32_t>(dims.size()));
  std::size_t n = 1;
  for (auto d : dims) {
    io::put_u32(out, d);
    n *= d;
  }
  if (n != data.size())
    throw std::runtime_error("tensor shape mismatch while saving: " + name);
  for (float v : data) io::put_f32(out, v);
}

}  // namespace detail

inline void save_checkpoint(const EncoderModel& model, const fs::path& path) {
  const auto vocab = static_cast<std::uint32_t>(model.config.vocab_size);
  const auto ed = static_cast<std::uint32_t>(model.config.embed_dim);
  const auto pd = static_cast<std::uint32_t>(model.config.proj_dim);

  std::string out;
  out += "DUET";
  io::put_u32(out, kCheckpointVersion);
  io::put_u32(out, vocab);
  io::put_u32(out, ed);
  io::put_u32(out, pd);
  io::put_u64(out, model.config.seed);
  out.push_back(model.config.share_heads ? 1 : 0);

  std::uint32_t count = model.config.share_heads ? 3 : 5;
  count += static_cast<std::uint32_t>(model.extras.size());
  io::put_u32(out, count);

  const std::uint32_t mat[2] = {ed, pd};
  const std::uint32_t emb[2] = {vocab, ed};
  const std::uint32_t vec[1] = {pd};
  detail::put_tensor(out, "embedding", emb, model.embedding);
  detail::put_tensor(out, "fact.weight", mat, model.fact_w);
  detail::put_tensor(out, "fact.bias", vec, model.fact_b);
  if (!model.config.share_heads) {
    detail::put_tensor(out, "decision.weight", mat, model.decision_w);
    detail::put_tensor(out, "decision.bias", vec, model.decision_b);
  }
  for (const auto& [name, tensor] : model.extras)
    detail::put_tensor(out, name, tensor.dims, tensor.data);

  io::write_file_atomic(path, out);
}

inline EncoderModel load_checkpoint(const fs::path& path) {
  const std::string bytes = io::read_file(path);
  io::Reader rd(bytes, path.string());
  if (rd.str(4) != "DUET")
    throw ValidationError("not a model checkpoint (bad magic): " + path.string());
  const std::uint32_t version = rd.u32();
  if (version != kCheckpointVersion)
    throw ValidationError("unsupported checkpoint version " +
                          std::to_string(version) + ": " + path.string());

  EncoderModel model;
  model.config.vocab_size = static_cast<int>(rd.u32());
  model.config.embed_dim = static_cast<int>(rd.u32());
  model.config.proj_dim = static_cast<int>(rd.u32());
  model.config.seed = rd.u64();
  model.config.share_heads = rd.str(1)[0] != 0;
  model.config.validate();

  const std::uint32_t count = rd.u32();
  std::map<std::string, Tensor> tensors;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = rd.str(rd.u32());
    Tensor t;
    t.dims.resize(rd.u32());
    std::size_t n = 1;
    for (auto& d : t.dims) {
      d = rd.u32();
      n *= d;
    }
    if (n > bytes.size())  // cheap sanity bound before allocating
      throw std::runtime_error("corrupted file (tensor too large): " + path.string());
    t.data.resize(n);
    for (auto& v : t.data) v = rd.f32();
    if (!tensors.emplace(name, std::move(t)).second)
      throw std::runtime_error("corrupted file (duplicate tensor " + name + "): " +
                               path.string());
  }
  rd.expect_end();

  auto take = [&](const std::string& name, std::vector<std::uint32_t> dims) {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw std::runtime_error("corrupted file (missing tensor " + name + "): " +
                               path.string());
    if (it->second.dims != dims)
      throw std::runtime_error("corrupted file (bad shape for " + name + "): " +
                               path.string());
    std::vector<float> data = std::move(it->second.data);
    tensors.erase(it);
    return data;
  };

  const auto vocab = static_cast<std::uint32_t>(model.config.vocab_size);
  const auto ed = static_cast<std::uint32_t>(model.config.embed_dim);
  const auto pd = static_cast<std::uint32_t>(model.config.proj_dim);
  model.embedding = take("embedding", {vocab, ed});
  model.fact_w = take("fact.weight", {ed, pd});
  model.fact_b = take("fact.bias", {pd});
  if (!model.config.share_heads) {
    model.decision_w = take("decision.weight", {ed, pd});
    model.decision_b = take("decision.bias", {pd});
  }
  model.extras = std::move(tensors);
  return model;
}

}  // namespace duet
