#include "cxit/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "cxit/config.hpp"
#include "cxit/error.hpp"

namespace cxit {

namespace {

constexpr char kMagic[] = "CXITCKP1";
constexpr std::size_t kMagicLen = 8;

void append_f32(std::vector<float>& out, const Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(static_cast<float>(v[i]));
}

Vector read_f32(const char*& cursor, std::size_t count) {
  Vector v(static_cast<Eigen::Index>(count));
  for (std::size_t i = 0; i < count; ++i) {
    float x;
    std::memcpy(&x, cursor, sizeof(float));
    cursor += sizeof(float);
    v[static_cast<Eigen::Index>(i)] = x;
  }
  return v;
}

Vector round_f32(const Vector& v) {
  return v.unaryExpr([](double x) { return static_cast<double>(static_cast<float>(x)); });
}

}  // namespace

void snap_to_f32(TrainState& state) {
  unflatten(round_f32(flatten(state.params)), state.params);
  state.adam.m = round_f32(state.adam.m);
  state.adam.v = round_f32(state.adam.v);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto groups = param_groups(ckpt.state.params);
  const std::size_t count = param_count(ckpt.state.params);
  if (static_cast<std::size_t>(ckpt.state.adam.m.size()) != count ||
      static_cast<std::size_t>(ckpt.state.adam.v.size()) != count)
    throw InvalidArgument("save_checkpoint: optimizer state does not match parameter count");

  nlohmann::ordered_json header;
  header["version"] = 1;
  header["step"] = ckpt.state.adam.step;
  header["seed"] = ckpt.seed;
  header["model"] = model_to_json(ckpt.model);
  header["count"] = count;
  header["sections"] = {"params", "adam_m", "adam_v"};
  auto& list = header["groups"] = nlohmann::ordered_json::array();
  for (const auto& g : groups)
    list.push_back({{"name", g.name}, {"shape", g.shape}, {"offset", g.offset}});
  header["dtype"] = "f32";
  if (!ckpt.run_config.is_null()) header["run_config"] = ckpt.run_config;

  std::vector<float> payload;
  payload.reserve(3 * count);
  append_f32(payload, flatten(ckpt.state.params));
  append_f32(payload, ckpt.state.adam.m);
  append_f32(payload, ckpt.state.adam.v);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out.write(kMagic, kMagicLen);
  const std::string line = header.dump() + "\n";
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!out) throw IoError(path.string(), "write failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open for reading");
  char magic[kMagicLen];
  if (!in.read(magic, kMagicLen) || std::memcmp(magic, kMagic, kMagicLen) != 0)
    throw ParseError("magic", "expected CXITCKP1");
  std::string line;
  if (!std::getline(in, line)) throw ParseError("header", "missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("header", e.what());
  }
  for (const char* key : {"version", "step", "seed", "model", "count", "groups", "dtype"})
    if (!header.contains(key)) throw ParseError(key, "missing");
  if (header["version"] != 1) throw ParseError("version", "unsupported version " + header["version"].dump());
  if (header["dtype"] != "f32") throw ParseError("dtype", "unsupported dtype " + header["dtype"].dump());

  Checkpoint ckpt;
  ckpt.model = model_from_json(header["model"]);
  ckpt.seed = header["seed"].get<std::uint64_t>();
  if (header.contains("run_config")) ckpt.run_config = header["run_config"];

  // Shapes come from the model config; the stored group table must agree.
  ModuleParams params = init_module_params(ckpt.model, 0);
  const auto groups = param_groups(params);
  const auto& stored = header["groups"];
  if (!stored.is_array() || stored.size() != groups.size())
    throw ParseError("groups", "group table does not match the model configuration");
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (stored[i].value("name", "") != groups[i].name ||
        stored[i].value("shape", std::vector<std::size_t>{}) != groups[i].shape)
      throw ParseError("groups", "mismatch at " + groups[i].name);
  }
  const std::size_t count = param_count(params);
  if (header["count"].get<std::size_t>() != count)
    throw ParseError("count", "does not match the model configuration");

  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() != 3 * count * sizeof(float))
    throw ParseError("payload", "expected " + std::to_string(3 * count * sizeof(float)) + " bytes, found " +
                                    std::to_string(bytes.size()));
  const char* cursor = bytes.data();
  unflatten(read_f32(cursor, count), params);
  ckpt.state.params = std::move(params);
  ckpt.state.adam.m = read_f32(cursor, count);
  ckpt.state.adam.v = read_f32(cursor, count);
  ckpt.state.adam.step = header["step"].get<std::size_t>();
  return ckpt;
}

}  // namespace cxit
