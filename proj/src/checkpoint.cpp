#include "vgan/checkpoint.hpp"

#include <fstream>
#include <map>

#include <json.hpp>

#include "vgan/errors.hpp"

namespace vgan {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::pair<std::string, const torch::nn::Module*>> modules_of(const GanModel& m) {
  std::vector<std::pair<std::string, const torch::nn::Module*>> out;
  if (m.progan) out.emplace_back("generator", m.progan.get());
  if (m.style) out.emplace_back("generator", m.style.get());
  if (m.critic) out.emplace_back("critic", m.critic.get());
  if (m.encoder) out.emplace_back("encoder", m.encoder.get());
  if (m.latent_disc) out.emplace_back("latent_disc", m.latent_disc.get());
  return out;
}

void write_blob(const fs::path& path, const torch::Tensor& t) {
  auto x = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(x.data_ptr<float>()), static_cast<std::streamsize>(x.numel() * 4));
  if (!os) throw IoError("write failed: " + path.string());
}

torch::Tensor read_blob(const fs::path& path, const std::vector<int64_t>& shape) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("missing tensor blob " + path.string());
  auto t = torch::empty(shape, torch::kFloat32);
  const auto bytes = static_cast<std::streamsize>(t.numel() * 4);
  is.read(reinterpret_cast<char*>(t.data_ptr<float>()), bytes);
  if (is.gcount() != bytes || is.peek() != std::char_traits<char>::eof())
    throw FormatError("tensor blob " + path.string() + " does not match its manifest shape");
  return t;
}

}  // namespace

void save_checkpoint(const GanModel& model, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest = {
      {"format", "vgan-checkpoint"},
      {"version", 1},
      {"arch", to_string(model.cfg.arch)},
      {"full_shape", {model.cfg.full_shape.d1, model.cfg.full_shape.d2, model.cfg.full_shape.d3}},
      {"gen_channels", model.cfg.gen_channels},
      {"critic_channels", model.cfg.critic_channels},
      {"latent_dim", model.cfg.latent_dim},
      {"stage", model.stage.stage},
      {"fade_alpha", model.stage.fade_alpha},
      {"step", model.step},
      {"has_encoder", static_cast<bool>(model.encoder)},
      {"has_latent_disc", static_cast<bool>(model.latent_disc)},
  };
  if (model.w_bar) {
    auto w = model.w_bar->to(torch::kFloat64).contiguous();
    manifest["w_bar"] = std::vector<double>(w.data_ptr<double>(), w.data_ptr<double>() + w.numel());
    manifest["w_bar_samples"] = model.w_bar_samples;
  }
  json tensors = json::array();
  for (const auto& [module_name, module] : modules_of(model)) {
    for (const auto& item : module->named_parameters()) {
      const std::string name = module_name + "." + item.key();
      const std::string file = name + ".f32";
      write_blob(dir / file, item.value());
      tensors.push_back({{"name", name}, {"shape", item.value().sizes().vec()}, {"file", file}});
    }
  }
  manifest["tensors"] = tensors;
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) throw IoError("cannot write manifest in " + dir.string());
  os << manifest.dump(2) << "\n";
}

bool is_checkpoint_dir(const fs::path& dir) { return fs::is_regular_file(dir / "manifest.json"); }

GanModel load_checkpoint(const fs::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw IoError("no manifest.json in " + dir.string());
  json manifest;
  try {
    manifest = json::parse(is);
  } catch (const json::exception& e) {
    throw FormatError(std::string("unreadable checkpoint manifest: ") + e.what());
  }

  ModelConfig cfg;
  GanModel model;
  try {
    cfg.arch = parse_arch(manifest.at("arch").get<std::string>());
    const auto shape = manifest.at("full_shape");
    cfg.full_shape = {shape[0].get<int64_t>(), shape[1].get<int64_t>(), shape[2].get<int64_t>()};
    cfg.gen_channels = manifest.at("gen_channels").get<int64_t>();
    cfg.critic_channels = manifest.at("critic_channels").get<int64_t>();
    cfg.latent_dim = manifest.value("latent_dim", kLatentDim);
    model = GanModel::create(cfg, 0);
    model.stage = {manifest.at("stage").get<int>(), manifest.at("fade_alpha").get<double>()};
    model.stage.validate();
    model.step = manifest.value("step", int64_t{0});
    if (manifest.value("has_encoder", false)) model.encoder = Encoder(cfg, cfg.arch);
    if (manifest.value("has_latent_disc", false)) model.latent_disc = LatentDiscriminator(cfg.latent_dim);
    if (manifest.contains("w_bar")) {
      const auto w = manifest.at("w_bar").get<std::vector<double>>();
      model.w_bar = torch::tensor(w, torch::kFloat64).to(torch::kFloat32);
      model.w_bar_samples = manifest.value("w_bar_samples", int64_t{0});
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("invalid checkpoint manifest: ") + e.what());
  }

  std::map<std::string, torch::Tensor> params;
  for (const auto& [module_name, module] : modules_of(model))
    for (const auto& item : module->named_parameters()) params[module_name + "." + item.key()] = item.value();

  torch::NoGradGuard no_grad;
  size_t loaded = 0;
  for (const auto& entry : manifest.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto it = params.find(name);
    if (it == params.end()) throw FormatError("checkpoint tensor '" + name + "' has no matching parameter");
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    if (it->second.sizes().vec() != shape) throw FormatError("shape mismatch for '" + name + "'");
    it->second.copy_(read_blob(dir / entry.at("file").get<std::string>(), shape));
    ++loaded;
  }
  if (loaded != params.size())
    throw FormatError("checkpoint covers " + std::to_string(loaded) + " of " + std::to_string(params.size()) +
                      " parameters");
  return model;
}

}  // namespace vgan
