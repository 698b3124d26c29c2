#include "scan/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "scan/error.hpp"

namespace scan {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "weights.bin is written in native little-endian order");

json stage_to_json(const Stage& st) {
  const StageConfig& c = st.cfg;
  return {{"resolution", c.resolution},
          {"base_filters", c.base_filters},
          {"n_res_blocks", c.n_res_blocks},
          {"fusion_variant", std::string(to_string(c.fusion_variant))},
          {"skip", c.skip},
          {"fusion", c.fusion},
          {"fusion_hidden_filters", c.fusion_hidden_filters},
          {"disc_base_filters", c.disc_base_filters},
          {"disc_n_layers", c.disc_n_layers},
          {"uw_weight", st.uw_weight}};
}

template <class T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ManifestError("manifest: missing '" + std::string(key) + "' in " + where);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ManifestError("manifest: field '" + std::string(key) + "' in " + where + " has the wrong type");
  }
}

StageConfig stage_from_json(const json& j, const std::string& where) {
  StageConfig c;
  c.resolution = field<int>(j, "resolution", where);
  c.base_filters = field<int>(j, "base_filters", where);
  c.n_res_blocks = field<int>(j, "n_res_blocks", where);
  try {
    c.fusion_variant = parse_fusion_variant(field<std::string>(j, "fusion_variant", where));
  } catch (const ConfigError& e) {
    throw ManifestError(std::string("manifest: ") + e.what());
  }
  c.skip = field<bool>(j, "skip", where);
  c.fusion = field<bool>(j, "fusion", where);
  c.fusion_hidden_filters = field<int>(j, "fusion_hidden_filters", where);
  c.disc_base_filters = field<int>(j, "disc_base_filters", where);
  c.disc_n_layers = field<int>(j, "disc_n_layers", where);
  return c;
}

void write_file_atomically(const fs::path& target, const std::string& bytes) {
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
}

}  // namespace

void save_checkpoint(const Pipeline& p, const TrainingState& state, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

  json params = json::array();
  std::string blob;
  for (const auto& [name, t] : p.params().entries()) {
    const Shape& s = t.shape();
    params.push_back({{"name", name}, {"shape", {s.n, s.c, s.h, s.w}}, {"byte_offset", blob.size()}});
    const std::vector<float> values(t.data().begin(), t.data().end());
    blob.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(float));
  }
  json stages = json::array();
  for (int k = 1; k <= p.num_stages(); ++k) stages.push_back(stage_to_json(p.stage(k)));
  json log = json::array();
  for (const EpochSummary& e : state.metric_log) {
    log.push_back({{"epoch", e.epoch},
                   {"loss_G", e.loss_G},
                   {"loss_D", e.loss_D},
                   {"cycle_term", e.cycle_term},
                   {"adv_term", e.adv_term},
                   {"gp_term", e.gp_term}});
  }
  const json manifest = {{"format_version", kCheckpointFormatVersion},
                         {"seed", p.seed()},
                         {"stages", stages},
                         {"epoch", state.epoch},
                         {"iteration", state.iteration},
                         {"rng_state", state.rng_state},
                         {"trained_stages", state.trained_stages},
                         {"metric_log", log},
                         {"weights_bytes", blob.size()},
                         {"parameters", params}};
  write_file_atomically(dir / "weights.bin", blob);
  write_file_atomically(dir / "manifest.json", manifest.dump(2) + "\n");
}

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open " + manifest_path.string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw ManifestError("manifest " + manifest_path.string() + " is not valid JSON: " + e.what());
  }
  const std::string where = manifest_path.string();
  const int version = field<int>(m, "format_version", where);
  if (version != kCheckpointFormatVersion) {
    throw ManifestError("unsupported checkpoint format_version " + std::to_string(version));
  }
  const json& stage_list = m.contains("stages") ? m.at("stages") : json();
  if (!stage_list.is_array() || stage_list.empty()) throw ManifestError("manifest: 'stages' must be a non-empty array");
  std::vector<StageConfig> configs;
  std::vector<real> uw;
  for (std::size_t i = 0; i < stage_list.size(); ++i) {
    const std::string sw = "stage " + std::to_string(i + 1);
    configs.push_back(stage_from_json(stage_list[i], sw));
    uw.push_back(field<real>(stage_list[i], "uw_weight", sw));
  }
  LoadedCheckpoint out;
  try {
    out.pipeline = std::make_unique<Pipeline>(configs, field<std::uint64_t>(m, "seed", where));
  } catch (const ConfigError& e) {
    throw ManifestError(std::string("manifest stage configs are invalid: ") + e.what());
  }
  for (int k = 1; k <= out.pipeline->num_stages(); ++k) out.pipeline->stage(k).uw_weight = uw[static_cast<std::size_t>(k - 1)];

  out.state.epoch = field<int>(m, "epoch", where);
  out.state.iteration = field<std::int64_t>(m, "iteration", where);
  out.state.rng_state = field<std::string>(m, "rng_state", where);
  out.state.trained_stages = field<std::vector<int>>(m, "trained_stages", where);
  const json& log = m.contains("metric_log") ? m.at("metric_log") : json::array();
  for (const json& e : log) {
    EpochSummary s;
    s.epoch = field<int>(e, "epoch", "metric_log");
    s.loss_G = field<double>(e, "loss_G", "metric_log");
    s.loss_D = field<double>(e, "loss_D", "metric_log");
    s.cycle_term = field<double>(e, "cycle_term", "metric_log");
    s.adv_term = field<double>(e, "adv_term", "metric_log");
    s.gp_term = field<double>(e, "gp_term", "metric_log");
    out.state.metric_log.push_back(s);
  }

  const json& records = m.contains("parameters") ? m.at("parameters") : json();
  if (!records.is_array()) throw ManifestError("manifest: 'parameters' must be an array");
  const auto& entries = out.pipeline->params().entries();
  if (records.size() != entries.size()) {
    throw ManifestError("manifest lists " + std::to_string(records.size()) + " parameters, pipeline has " +
                        std::to_string(entries.size()));
  }

  const fs::path blob_path = dir / "weights.bin";
  std::error_code ec;
  const auto blob_size = fs::file_size(blob_path, ec);
  if (ec) throw IoError("cannot stat " + blob_path.string() + ": " + ec.message());
  const auto expected = field<std::uint64_t>(m, "weights_bytes", where);
  if (blob_size < expected) {
    throw TruncatedError(blob_path.string() + " holds " + std::to_string(blob_size) + " bytes, manifest expects " +
                         std::to_string(expected));
  }
  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw IoError("cannot open " + blob_path.string());

  auto it = entries.begin();
  for (const json& r : records) {
    const std::string name = field<std::string>(r, "name", "parameter record");
    if (name != it->first) throw ManifestError("manifest parameter " + name + " does not match pipeline parameter " + it->first);
    const auto shape = field<std::vector<int>>(r, "shape", "parameter " + name);
    const Shape& s = it->second.shape();
    if (shape != std::vector<int>{s.n, s.c, s.h, s.w}) {
      throw ManifestError("parameter " + name + ": manifest shape does not match the configured shape " + s.str());
    }
    const auto offset = field<std::uint64_t>(r, "byte_offset", "parameter " + name);
    const std::uint64_t bytes = static_cast<std::uint64_t>(s.numel()) * sizeof(float);
    if (offset + bytes > blob_size) {
      throw TruncatedError("parameter " + name + " extends past the end of " + blob_path.string());
    }
    std::vector<float> values(static_cast<std::size_t>(s.numel()));
    blob.seekg(static_cast<std::streamoff>(offset));
    blob.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
    if (!blob) throw TruncatedError("short read of parameter " + name + " from " + blob_path.string());
    Tensor t = it->second;
    std::copy(values.begin(), values.end(), t.data_mut().begin());
    ++it;
  }
  return out;
}

std::string parameter_digest(const ParameterStore& store, std::string_view prefix) {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("SHA-256 unavailable");
  }
  for (const auto& [name, t] : store.with_prefix(prefix)) {
    const Shape& s = t.shape();
    const std::string header = name + "|" + s.str() + "|";
    EVP_DigestUpdate(ctx, header.data(), header.size());
    const std::vector<float> values(t.data().begin(), t.data().end());
    EVP_DigestUpdate(ctx, values.data(), values.size() * sizeof(float));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

void copy_stages(const Pipeline& from, Pipeline& to, int up_to) {
  for (int k = 1; k <= up_to; ++k) {
    if (!(from.stage(k).cfg == to.stage(k).cfg)) {
      throw UsageError("stage " + std::to_string(k) + " configuration differs between pipelines");
    }
    const std::string prefix = "stage" + std::to_string(k) + ".";
    for (const auto& [name, src] : from.params().with_prefix(prefix)) {
      Tensor dst = to.params().at(name);
      if (dst.shape() != src.shape()) throw UsageError("parameter " + name + " shape differs between pipelines");
      std::copy(src.data().begin(), src.data().end(), dst.data_mut().begin());
    }
    to.stage(k).uw_weight = from.stage(k).uw_weight;
  }
}

}  // namespace scan
