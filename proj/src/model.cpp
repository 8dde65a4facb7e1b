#include "trialsum/model.hpp"

#include "trialsum/errors.hpp"

#include <algorithm>
#include <random>
#include <regex>
#include <set>

namespace trialsum {

std::string_view architecture_name(Architecture a) {
  return a == Architecture::baseline ? "baseline" : "multihead";
}

std::optional<Architecture> parse_architecture(std::string_view s) {
  if (s == "baseline") return Architecture::baseline;
  if (s == "multihead") return Architecture::multihead;
  return std::nullopt;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw InputError("model config: " + what); };
  if (num_aspects != kNumAspects) fail("num_aspects must be " + std::to_string(kNumAspects));
  if (vocab_size <= special::count) fail("vocab_size must exceed the number of special tokens");
  if (width < 1 || n_heads < 1 || width % n_heads != 0) fail("width must be a positive multiple of n_heads");
  if (ffn_mult < 1) fail("ffn_mult must be >= 1");
  if (n_enc_layers < 1) fail("n_enc_layers must be >= 1");
  if (n_aspect_layers < 1 || n_aspect_layers > n_dec_layers) fail("n_aspect_layers must be in [1, n_dec_layers]");
  if (architecture == Architecture::multihead && n_dec_layers < 2) fail("multihead needs n_dec_layers >= 2");
  if (max_src_len < 4 || max_tgt_len < 2) fail("max_src_len must be >= 4 and max_tgt_len >= 2");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"architecture", architecture_name(architecture)},
          {"num_aspects", num_aspects},
          {"vocab_size", vocab_size},
          {"width", width},
          {"n_heads", n_heads},
          {"ffn_mult", ffn_mult},
          {"n_enc_layers", n_enc_layers},
          {"n_dec_layers", n_dec_layers},
          {"n_aspect_layers", n_aspect_layers},
          {"max_src_len", max_src_len},
          {"max_tgt_len", max_tgt_len}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {"architecture", "num_aspects",  "vocab_size",      "width",
                                              "n_heads",      "ffn_mult",     "n_enc_layers",    "n_dec_layers",
                                              "n_aspect_layers", "max_src_len", "max_tgt_len"};
  if (!j.is_object()) throw InputError("model config: expected an object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw InputError("model config: unknown field \"" + key + "\"");
  }
  ModelConfig c;
  try {
    if (j.contains("architecture")) {
      const auto a = parse_architecture(j.at("architecture").get<std::string>());
      if (!a) throw InputError("model config: unknown architecture");
      c.architecture = *a;
    }
    auto read = [&](const char* key, int& out) {
      if (j.contains(key)) out = j.at(key).get<int>();
    };
    read("num_aspects", c.num_aspects);
    read("vocab_size", c.vocab_size);
    read("width", c.width);
    read("n_heads", c.n_heads);
    read("ffn_mult", c.ffn_mult);
    read("n_enc_layers", c.n_enc_layers);
    read("n_dec_layers", c.n_dec_layers);
    read("n_aspect_layers", c.n_aspect_layers);
    read("max_src_len", c.max_src_len);
    read("max_tgt_len", c.max_tgt_len);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Bundles and examples

bool AspectBundle::empty() const {
  return std::all_of(kAllAspects.begin(), kAllAspects.end(), [&](Aspect a) { return aspect_empty(a); });
}

AspectBundle make_bundle(const Vocabulary& vocab, std::span<const TrialRecord> records, int max_src_len) {
  AspectBundle b;
  std::vector<std::array<std::vector<TokenId>, kNumAspects>> docs;
  for (const auto& r : records) {
    auto& d = docs.emplace_back();
    for (Aspect a : kAllAspects) d[static_cast<std::size_t>(aspect_index(a))] = vocab.encode(r.aspect_text(a));
  }

  // Appends `text` while it fits, leaving room for the closing tag.
  auto append = [](std::vector<TokenId>& out, const std::vector<TokenId>& text, std::size_t budget) {
    const std::size_t room = budget > out.size() + 1 ? budget - out.size() - 1 : 0;
    const std::size_t n = std::min(room, text.size());
    out.insert(out.end(), text.begin(), text.begin() + static_cast<std::ptrdiff_t>(n));
    return n == text.size();
  };

  const auto budget = static_cast<std::size_t>(max_src_len);
  for (Aspect a : kAllAspects) {
    const auto k = static_cast<std::size_t>(aspect_index(a));
    auto& seq = b.aspects[k];
    seq.push_back(special::open_tag(a));
    for (std::size_t d = 0; d < docs.size(); ++d) {
      if (d > 0) {
        if (seq.size() + 2 > budget) break;
        seq.push_back(special::doc_sep);
      }
      if (!append(seq, docs[d][k], budget)) break;
    }
    seq.push_back(special::close_tag(a));
  }

  const std::size_t total = budget * kNumAspects;
  auto& seq = b.interleaved;
  bool full = false;
  for (std::size_t d = 0; d < docs.size() && !full; ++d) {
    if (d > 0) {
      if (seq.size() + 3 > total) break;
      seq.push_back(special::doc_sep);
    }
    for (Aspect a : kAllAspects) {
      if (seq.size() + 2 > total) {
        full = true;
        break;
      }
      seq.push_back(special::open_tag(a));
      full = !append(seq, docs[d][static_cast<std::size_t>(aspect_index(a))], total);
      seq.push_back(special::close_tag(a));
      if (full) break;
    }
  }
  return b;
}

TrainingExample make_training_example(const Vocabulary& vocab, std::span<const TrialRecord> records,
                                      std::string_view tagged_target, const ModelConfig& config) {
  // Anything shaped like a tag must be one of the aspect tags.
  static const std::regex tag_like(R"(</?([A-Za-z_]+)>)");
  const std::string text(tagged_target);
  for (auto it = std::sregex_iterator(text.begin(), text.end(), tag_like); it != std::sregex_iterator(); ++it) {
    if (!parse_aspect((*it)[1].str())) throw InputError("target: unknown aspect tag " + it->str());
  }

  TrainingExample ex;
  ex.source = make_bundle(vocab, records, config.max_src_len);
  const bool keep_tags = config.architecture == Architecture::baseline;
  int open = -1;  // aspect index of the enclosing tag
  for (const auto& tok : split_tokens(tagged_target)) {
    const auto id = vocab.find(tok).value_or(special::unk);
    if (auto a = special::opened_aspect(id)) {
      if (open >= 0) {
        throw InputError("target: <" + std::string(aspect_name(*a)) + "> opened inside <" +
                         std::string(aspect_name(static_cast<Aspect>(open))) + ">");
      }
      open = aspect_index(*a);
      if (!keep_tags) continue;
    } else if (auto a = special::closed_aspect(id)) {
      if (open != aspect_index(*a)) throw InputError("target: unbalanced </" + std::string(aspect_name(*a)) + ">");
      open = -1;
      if (!keep_tags) continue;
    } else if (special::is_special(id) && id != special::unk) {
      throw InputError("target: unexpected special token " + tok);
    }
    ex.target.push_back(id);
    ex.labels.push_back(!keep_tags ? open : -1);
  }
  if (open >= 0) throw InputError("target: unclosed <" + std::string(aspect_name(static_cast<Aspect>(open))) + ">");
  ex.target.push_back(special::eos);
  ex.labels.push_back(-1);
  if (ex.target.size() > static_cast<std::size_t>(config.max_tgt_len)) {
    throw InputError("target: " + std::to_string(ex.target.size()) + " tokens exceeds max_tgt_len");
  }
  return ex;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

// Box-Muller over mt19937_64, so initialisation is identical across standard libraries.
class Gaussian {
 public:
  explicit Gaussian(std::uint64_t seed) : rng_(seed) {}

  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = static_cast<double>((rng_() >> 11) + 1) * 0x1.0p-53;
    const double u2 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::mt19937_64 rng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

template <typename Scalar>
AttentionParams<Scalar> attention_params(Index d) {
  return {{d, d}, {1, d}, {d, d}, {1, d}, {d, d}, {1, d}, {d, d}, {1, d}};
}

template <typename Scalar>
NormParams<Scalar> norm_params(Index d) {
  return {{1, d}, {1, d}};
}

template <typename Scalar>
FeedForwardParams<Scalar> ffn_params(Index d, Index f) {
  return {{d, f}, {1, f}, {f, d}, {1, d}};
}

template <typename Scalar>
DecoderLayerParams<Scalar> decoder_layer(Index d, Index f) {
  return {norm_params<Scalar>(d), attention_params<Scalar>(d), norm_params<Scalar>(d),
          attention_params<Scalar>(d), norm_params<Scalar>(d), ffn_params<Scalar>(d, f)};
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

template <typename Scalar>
ModelParams<Scalar> allocate_params(const ModelConfig& config) {
  config.validate();
  const Index d = config.width;
  const Index f = static_cast<Index>(config.width) * config.ffn_mult;
  ModelParams<Scalar> p;
  p.embedding = {config.vocab_size, d};
  p.output_bias = {1, config.vocab_size};
  for (int i = 0; i < config.n_enc_layers; ++i) {
    p.encoder.push_back({norm_params<Scalar>(d), attention_params<Scalar>(d), norm_params<Scalar>(d),
                         ffn_params<Scalar>(d, f)});
  }
  p.encoder_norm = norm_params<Scalar>(d);
  for (int i = 0; i < config.shared_dec_layers(); ++i) p.decoder.push_back(decoder_layer<Scalar>(d, f));
  for (int k = 0; k < config.num_streams(); ++k) {
    DecoderTopParams<Scalar> top;
    for (int i = 0; i < config.n_aspect_layers; ++i) top.layers.push_back(decoder_layer<Scalar>(d, f));
    top.final_norm = norm_params<Scalar>(d);
    p.tops.push_back(std::move(top));
  }
  if (config.architecture == Architecture::multihead) p.gate = {d, 1};
  return p;
}

template <typename Scalar>
ModelParams<Scalar> init_params(const ModelConfig& config, std::uint64_t seed) {
  auto p = allocate_params<Scalar>(config);
  Gaussian normal(seed);
  const double d_std = 1.0 / std::sqrt(static_cast<double>(config.width));
  for_each_parameter(p, [&](const std::string& name, ag::Parameter<Scalar>& x) {
    if (ends_with(name, ".gain")) {
      x.value.setOnes();
      return;
    }
    if (x.value.rows() == 1) return;  // biases stay zero
    const double sd = (name == "embedding" || name == "gate") ? d_std : 1.0 / std::sqrt(static_cast<double>(x.value.rows()));
    for (Index i = 0; i < x.value.size(); ++i) x.value.data()[i] = static_cast<Scalar>(sd * normal());
  });
  return p;
}

template ModelParams<float> allocate_params<float>(const ModelConfig&);
template ModelParams<double> allocate_params<double>(const ModelConfig&);
template ModelParams<float> init_params<float>(const ModelConfig&, std::uint64_t);
template ModelParams<double> init_params<double>(const ModelConfig&, std::uint64_t);

// ---------------------------------------------------------------------------
// Forward passes

Eigen::VectorXd mix(std::span<const Eigen::VectorXd> dists, const Eigen::VectorXd& weights) {
  if (dists.empty() || static_cast<Index>(dists.size()) != weights.size()) {
    throw InputError("mix: need one weight per distribution");
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(dists.front().size());
  for (std::size_t k = 0; k < dists.size(); ++k) out += weights(static_cast<Index>(k)) * dists[k];
  return out;
}

namespace {

template <typename Scalar>
using V = ag::Var<Scalar>;

template <typename Scalar>
V<Scalar> attention_block(ag::Tape<Scalar>& t, const AttentionParams<Scalar>& p, V<Scalar> x, V<Scalar> mem,
                          int n_heads, bool causal) {
  auto q = ag::linear(x, t.parameter(p.wq), t.parameter(p.bq));
  auto k = ag::linear(mem, t.parameter(p.wk), t.parameter(p.bk));
  auto v = ag::linear(mem, t.parameter(p.wv), t.parameter(p.bv));
  return ag::linear(ag::attention(q, k, v, n_heads, causal), t.parameter(p.wo), t.parameter(p.bo));
}

template <typename Scalar>
V<Scalar> norm(ag::Tape<Scalar>& t, const NormParams<Scalar>& p, V<Scalar> x) {
  return ag::layer_norm(x, t.parameter(p.gain), t.parameter(p.bias));
}

template <typename Scalar>
V<Scalar> feed_forward(ag::Tape<Scalar>& t, const FeedForwardParams<Scalar>& p, V<Scalar> x) {
  auto h = ag::gelu(ag::linear(x, t.parameter(p.w1), t.parameter(p.b1)));
  return ag::linear(h, t.parameter(p.w2), t.parameter(p.b2));
}

template <typename Scalar>
V<Scalar> decoder_layer_forward(ag::Tape<Scalar>& t, const DecoderLayerParams<Scalar>& p, V<Scalar> x,
                                V<Scalar> mem, int n_heads) {
  auto h = norm(t, p.norm1, x);
  x = ag::add(x, attention_block(t, p.self_attn, h, h, n_heads, true));
  x = ag::add(x, attention_block(t, p.cross_attn, norm(t, p.norm2, x), mem, n_heads, false));
  return ag::add(x, feed_forward(t, p.ffn, norm(t, p.norm3, x)));
}

// Mean NLL of `targets` under sum_k z_k softmax(logits_k), plus lambda times the
// mean cross-entropy of z against `labels` (rows with label -1 skipped).
// Without a gate there is a single stream and no auxiliary term.
template <typename Scalar>
LossResult<Scalar> mixture_nll(ag::Tape<Scalar>& t, std::span<const V<Scalar>> logits,
                               std::optional<V<Scalar>> gate, std::span<const TokenId> targets,
                               std::span<const int> labels, Scalar lambda) {
  using Mat = Matrix<Scalar>;
  const Index T = static_cast<Index>(targets.size());
  const std::size_t K = logits.size();
  std::size_t n_lab = 0;
  if (gate) n_lab = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](int l) { return l >= 0; }));

  // Per row: log p_k[y] for each stream and log z.
  Mat logp_y(T, static_cast<Index>(K));
  Mat log_z = Mat::Zero(T, static_cast<Index>(K));
  for (std::size_t k = 0; k < K; ++k) {
    const Mat& L = logits[k].value();
    for (Index r = 0; r < T; ++r) logp_y(r, static_cast<Index>(k)) = L(r, targets[r]) - log_sum_exp(L.row(r));
  }
  if (gate) {
    const Mat& G = gate->value();
    for (Index r = 0; r < T; ++r) log_z.row(r) = G.row(r).array() - log_sum_exp(G.row(r));
  }

  double nll = 0.0;
  double aux = 0.0;
  Mat resp(T, static_cast<Index>(K));
  for (Index r = 0; r < T; ++r) {
    const RowVector<Scalar> a = log_z.row(r) + logp_y.row(r);
    const Scalar lse = log_sum_exp(a);
    nll -= static_cast<double>(lse);
    resp.row(r) = (a.array() - lse).exp().matrix();
    if (gate && labels[r] >= 0) aux -= static_cast<double>(log_z(r, labels[r]));
  }
  nll /= static_cast<double>(T);
  if (n_lab > 0) aux /= static_cast<double>(n_lab);
  const double total = nll + (n_lab > 0 ? static_cast<double>(lambda) * aux : 0.0);

  std::vector<V<Scalar>> inputs(logits.begin(), logits.end());
  if (gate) inputs.push_back(*gate);
  std::vector<V<Scalar>> lv(logits.begin(), logits.end());
  std::vector<TokenId> ys(targets.begin(), targets.end());
  std::vector<int> labs(labels.begin(), labels.end());
  auto loss = t.emit(Mat::Constant(1, 1, static_cast<Scalar>(total)), std::span<const V<Scalar>>(inputs),
                     [lv = std::move(lv), gate, ys = std::move(ys), labs = std::move(labs), resp = std::move(resp),
                      log_z, n_lab, lambda, T](const Mat& g) {
                       const Scalar gt = g(0, 0) / static_cast<Scalar>(T);
                       for (std::size_t k = 0; k < lv.size(); ++k) {
                         if (!lv[k].tape->needs_grad(lv[k])) continue;
                         const Mat& L = lv[k].value();
                         Mat d(L.rows(), L.cols());
                         for (Index r = 0; r < T; ++r) {
                           const Scalar w = gt * resp(r, static_cast<Index>(k));
                           d.row(r) = softmax(L.row(r)).transpose() * w;
                           d(r, ys[r]) -= w;
                         }
                         lv[k].tape->accumulate(lv[k], d);
                       }
                       if (!gate || !gate->tape->needs_grad(*gate)) return;
                       Mat z = log_z.array().exp().matrix();
                       Mat d = (z - resp) * gt;
                       if (n_lab > 0) {
                         const Scalar ga = g(0, 0) * lambda / static_cast<Scalar>(n_lab);
                         for (Index r = 0; r < T; ++r) {
                           if (labs[r] < 0) continue;
                           RowVector<Scalar> e = z.row(r);
                           e(labs[r]) -= Scalar(1);
                           d.row(r) += ga * e;
                         }
                       }
                       gate->tape->accumulate(*gate, d);
                     });
  return {loss, nll, aux, n_lab};
}

}  // namespace

template <typename Scalar>
SummaryModel<Scalar>::SummaryModel(ModelConfig config, ModelParams<Scalar> params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const auto expected = allocate_params<Scalar>(config_);
  std::vector<std::pair<Index, Index>> shapes;
  for_each_parameter(expected, [&](const std::string&, const ag::Parameter<Scalar>& p) {
    shapes.emplace_back(p.value.rows(), p.value.cols());
  });
  std::size_t i = 0;
  for_each_parameter(params_, [&](const std::string& name, const ag::Parameter<Scalar>& p) {
    if (i >= shapes.size() || shapes[i] != std::pair{p.value.rows(), p.value.cols()}) {
      throw InputError("parameter " + name + " does not match the model config");
    }
    ++i;
  });
  if (i != shapes.size()) throw InputError("parameter set does not match the model config");

  const Index rows = std::max<Index>(static_cast<Index>(config_.max_src_len) * kNumAspects, config_.max_tgt_len);
  const Index d = config_.width;
  positions_.resize(rows, d);
  for (Index pos = 0; pos < rows; ++pos) {
    for (Index j = 0; j < d; j += 2) {
      const double angle = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(j) / static_cast<double>(d));
      positions_(pos, j) = static_cast<Scalar>(std::sin(angle));
      if (j + 1 < d) positions_(pos, j + 1) = static_cast<Scalar>(std::cos(angle));
    }
  }
}

template <typename Scalar>
ag::Var<Scalar> SummaryModel<Scalar>::embed_target(ag::Tape<Scalar>& tape, std::span<const TokenId> ids) const {
  const auto n = static_cast<Index>(ids.size());
  if (n > positions_.rows()) throw InputError("sequence longer than the position table");
  for (TokenId id : ids) {
    if (id < 0 || id >= config_.vocab_size) throw InputError("token id " + std::to_string(id) + " out of range");
  }
  auto x = ag::scale(ag::embedding(tape.parameter(params_.embedding), ids), static_cast<Scalar>(std::sqrt(config_.width)));
  return ag::add(x, tape.constant(positions_.topRows(n)));
}

template <typename Scalar>
ag::Var<Scalar> SummaryModel<Scalar>::encode_sequence(ag::Tape<Scalar>& tape, std::span<const TokenId> ids) const {
  auto x = embed_target(tape, ids);
  for (const auto& l : params_.encoder) {
    auto h = norm(tape, l.norm1, x);
    x = ag::add(x, attention_block(tape, l.self_attn, h, h, config_.n_heads, false));
    x = ag::add(x, feed_forward(tape, l.ffn, norm(tape, l.norm2, x)));
  }
  return norm(tape, params_.encoder_norm, x);
}

template <typename Scalar>
ag::Var<Scalar> SummaryModel<Scalar>::decode_stream(ag::Tape<Scalar>& tape, ag::Var<Scalar> x, ag::Var<Scalar> memory,
                                                    int stream) const {
  for (const auto& l : params_.decoder) x = decoder_layer_forward(tape, l, x, memory, config_.n_heads);
  const auto& top = params_.tops[static_cast<std::size_t>(stream)];
  for (const auto& l : top.layers) x = decoder_layer_forward(tape, l, x, memory, config_.n_heads);
  return norm(tape, top.final_norm, x);
}

template <typename Scalar>
std::vector<ag::Var<Scalar>> SummaryModel<Scalar>::encode_all(ag::Tape<Scalar>& tape, const AspectBundle& bundle) const {
  if (bundle.empty()) throw InputError("empty bundle: every aspect is empty");
  std::vector<ag::Var<Scalar>> out;
  if (config_.architecture == Architecture::baseline) {
    out.push_back(encode_sequence(tape, bundle.interleaved));
  } else {
    for (const auto& seq : bundle.aspects) out.push_back(encode_sequence(tape, seq));
  }
  return out;
}

template <typename Scalar>
std::vector<ag::Var<Scalar>> SummaryModel<Scalar>::decode_all(ag::Tape<Scalar>& tape, std::span<const TokenId> dec_in,
                                                              std::span<const ag::Var<Scalar>> memories) const {
  auto x = embed_target(tape, dec_in);
  std::vector<ag::Var<Scalar>> states;
  for (std::size_t k = 0; k < memories.size(); ++k) {
    states.push_back(decode_stream(tape, x, memories[k], static_cast<int>(k)));
  }
  return states;
}

template <typename Scalar>
Encodings<Scalar> SummaryModel<Scalar>::encode(const AspectBundle& bundle) const {
  ag::Tape<Scalar> tape(false);
  Encodings<Scalar> enc;
  for (auto v : encode_all(tape, bundle)) enc.streams.push_back(v.value());
  return enc;
}

template <typename Scalar>
DecoderStepOutput SummaryModel<Scalar>::readout(std::span<const ag::Var<Scalar>> states, Index row,
                                                std::size_t prefix_length, const GateOverride& gate_override) const {
  DecoderStepOutput out;
  const Matrix<Scalar>& E = params_.embedding.value;
  std::vector<Eigen::VectorXd> dists;
  for (const auto& s : states) {
    const RowVector<Scalar> y = s.value().row(row);
    const RowVector<Scalar> logits = y * E.transpose() + params_.output_bias.value.row(0);
    out.states.push_back(y.transpose().template cast<double>());
    dists.push_back(softmax(logits.template cast<double>()));
  }
  if (config_.architecture == Architecture::baseline) {
    out.probs = std::move(dists.front());
    return out;
  }
  const Eigen::VectorXd w = params_.gate.value.template cast<double>();
  out.gate_logits.resize(static_cast<Index>(states.size()));
  for (std::size_t k = 0; k < states.size(); ++k) out.gate_logits(static_cast<Index>(k)) = out.states[k].dot(w);
  out.weights = softmax(out.gate_logits);
  if (gate_override) {
    if (auto z = gate_override(prefix_length)) {
      if (z->size() != out.weights.size()) throw InputError("gate override has the wrong size");
      out.weights = *z;
    }
  }
  out.probs = mix(dists, out.weights);
  out.aspect_probs = std::move(dists);
  return out;
}

template <typename Scalar>
DecoderStepOutput SummaryModel<Scalar>::step(std::span<const TokenId> prefix, const Encodings<Scalar>& enc,
                                             const GateOverride& gate_override) const {
  if (prefix.empty() || prefix.front() != special::bos) throw InputError("prefix must start with BOS");
  if (prefix.size() > static_cast<std::size_t>(config_.max_tgt_len)) {
    throw InputError("prefix of " + std::to_string(prefix.size()) + " tokens exceeds max_tgt_len");
  }
  ag::Tape<Scalar> tape(false);
  std::vector<ag::Var<Scalar>> memories;
  for (const auto& m : enc.streams) memories.push_back(tape.constant_ref(m));
  const auto states = decode_all(tape, prefix, memories);
  return readout(states, static_cast<Index>(prefix.size()) - 1, prefix.size(), gate_override);
}

template <typename Scalar>
std::vector<DecoderStepOutput> SummaryModel<Scalar>::teacher_force(std::span<const TokenId> tokens,
                                                                   const Encodings<Scalar>& enc) const {
  if (tokens.empty()) return {};
  if (tokens.size() > static_cast<std::size_t>(config_.max_tgt_len)) {
    throw InputError("sequence of " + std::to_string(tokens.size()) + " tokens exceeds max_tgt_len");
  }
  std::vector<TokenId> dec_in{special::bos};
  dec_in.insert(dec_in.end(), tokens.begin(), tokens.end() - 1);
  ag::Tape<Scalar> tape(false);
  std::vector<ag::Var<Scalar>> memories;
  for (const auto& m : enc.streams) memories.push_back(tape.constant_ref(m));
  const auto states = decode_all(tape, dec_in, memories);
  std::vector<DecoderStepOutput> out;
  for (std::size_t i = 0; i < tokens.size(); ++i) out.push_back(readout(states, static_cast<Index>(i), i + 1, {}));
  return out;
}

template <typename Scalar>
LossResult<Scalar> SummaryModel<Scalar>::forward_loss(const TrainingExample& example, Scalar lambda,
                                                      ag::Tape<Scalar>& tape) const {
  if (!(lambda >= Scalar(0))) throw InputError("lambda must be >= 0");
  const auto& y = example.target;
  if (y.empty() || y.size() != example.labels.size()) throw InputError("target and labels must be non-empty and aligned");
  if (y.size() > static_cast<std::size_t>(config_.max_tgt_len)) throw InputError("target exceeds max_tgt_len");
  for (int l : example.labels) {
    if (l < -1 || l >= config_.num_aspects) throw InputError("label " + std::to_string(l) + " is not an aspect index");
  }

  const auto memories = encode_all(tape, example.source);
  std::vector<TokenId> dec_in{special::bos};
  dec_in.insert(dec_in.end(), y.begin(), y.end() - 1);
  const auto states = decode_all(tape, dec_in, memories);

  auto E = tape.parameter(params_.embedding);
  auto b = tape.parameter(params_.output_bias);
  std::vector<ag::Var<Scalar>> logits;
  for (auto s : states) logits.push_back(ag::add_row(ag::matmul_nt(s, E), b));
  std::optional<ag::Var<Scalar>> gate;
  if (config_.architecture == Architecture::multihead) {
    gate = ag::gate_logits(std::span<const ag::Var<Scalar>>(states), tape.parameter(params_.gate));
  }
  return mixture_nll(tape, std::span<const ag::Var<Scalar>>(logits), gate, y, example.labels, lambda);
}

template class SummaryModel<float>;
template class SummaryModel<double>;

}  // namespace trialsum
