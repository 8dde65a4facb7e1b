#include "trialsum/checkpoint.hpp"

#include "trialsum/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace trialsum {

namespace {

constexpr char kMagic[4] = {'T', 'S', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) throw InputError("checkpoint: truncated header");
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

std::string serialize_checkpoint(const SummaryModel<float>& model, const Vocabulary& vocab,
                                 const nlohmann::json& meta) {
  if (vocab.size() != static_cast<std::size_t>(model.config().vocab_size)) {
    throw InputError("checkpoint: vocabulary size does not match the model config");
  }
  nlohmann::json tensors = nlohmann::json::array();
  std::string data;
  for_each_parameter(model.params(), [&](const std::string& name, const ag::Parameter<float>& p) {
    tensors.push_back({{"name", name},
                       {"shape", {p.value.rows(), p.value.cols()}},
                       {"dtype", "float32"},
                       {"offset", data.size()}});
    data.append(reinterpret_cast<const char*>(p.value.data()), static_cast<std::size_t>(p.value.size()) * sizeof(float));
  });
  const nlohmann::json manifest{
      {"config", model.config().to_json()}, {"vocab", vocab.to_json()}, {"tensors", tensors}, {"meta", meta}};
  const std::string m = manifest.dump();

  std::string out(kMagic, sizeof(kMagic));
  put(out, kVersion);
  put(out, static_cast<std::uint64_t>(m.size()));
  out += m;
  out += data;
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw InputError("checkpoint: bad magic");
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = get<std::uint32_t>(bytes, pos);
  if (version != kVersion) throw InputError("checkpoint: unsupported version " + std::to_string(version));
  const auto mlen = get<std::uint64_t>(bytes, pos);
  if (mlen > bytes.size() - pos) throw InputError("checkpoint: truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(pos, mlen));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("checkpoint: malformed manifest: ") + e.what());
  }
  pos += mlen;
  const std::string_view data = bytes.substr(pos);

  try {
    const auto config = ModelConfig::from_json(manifest.at("config"));
    auto vocab = Vocabulary::from_json(manifest.at("vocab"));
    if (vocab.size() != static_cast<std::size_t>(config.vocab_size)) {
      throw InputError("checkpoint: vocabulary size does not match the model config");
    }
    auto params = allocate_params<float>(config);
    const auto& tensors = manifest.at("tensors");
    std::size_t i = 0, total = 0;
    for_each_parameter(params, [&](const std::string& name, ag::Parameter<float>& p) {
      if (i >= tensors.size()) throw InputError("checkpoint: missing tensor " + name);
      const auto& t = tensors[i++];
      if (t.at("name").get<std::string>() != name) throw InputError("checkpoint: expected tensor " + name);
      if (t.at("dtype").get<std::string>() != "float32") throw InputError("checkpoint: " + name + " is not float32");
      const auto shape = t.at("shape").get<std::vector<Index>>();
      if (shape.size() != 2 || shape[0] != p.value.rows() || shape[1] != p.value.cols()) {
        throw InputError("checkpoint: tensor " + name + " has the wrong shape");
      }
      const auto offset = t.at("offset").get<std::size_t>();
      const std::size_t n = static_cast<std::size_t>(p.value.size()) * sizeof(float);
      if (offset > data.size() || n > data.size() - offset) throw InputError("checkpoint: tensor " + name + " is truncated");
      std::memcpy(p.value.data(), data.data() + offset, n);
      total += n;
    });
    if (i != tensors.size()) throw InputError("checkpoint: unexpected extra tensors");
    if (total != data.size()) throw InputError("checkpoint: trailing bytes after tensor data");
    return {std::move(vocab), SummaryModel<float>(config, std::move(params)), manifest.value("meta", nlohmann::json::object())};
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const SummaryModel<float>& model, const Vocabulary& vocab,
                     const nlohmann::json& meta) {
  const auto bytes = serialize_checkpoint(model, vocab, meta);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace trialsum
