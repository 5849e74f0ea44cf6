#include "vgan/service.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "vgan/checkpoint.hpp"
#include "vgan/errors.hpp"
#include "vgan/png_writer.hpp"

namespace vgan {

using nlohmann::json;

namespace {

std::string sha256_hex(const std::string& prefix, const void* data, size_t n) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  EVP_DigestUpdate(ctx, prefix.data(), prefix.size());
  EVP_DigestUpdate(ctx, data, n);
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int{md[i]};
  return os.str();
}

bool valid_id(const std::string& id) {
  if (id.size() != 64) return false;
  for (char c : id)
    if (!std::isxdigit(static_cast<unsigned char>(c))) return false;
  return true;
}

torch::Tensor code_from_json(const json& j, int64_t dim, const char* field) {
  if (!j.is_array()) throw ParameterError(std::string(field) + " must be an array of numbers");
  if (static_cast<int64_t>(j.size()) != dim)
    throw ParameterError(std::string(field) + " must have " + std::to_string(dim) + " entries");
  auto t = torch::empty({1, dim}, torch::kFloat32);
  for (int64_t i = 0; i < dim; ++i) {
    if (!j[i].is_number()) throw ParameterError(std::string(field) + " must be an array of numbers");
    const double v = j[i].get<double>();
    if (!std::isfinite(v)) throw ParameterError(std::string(field) + " has non-finite entries");
    t[0][i] = static_cast<float>(v);
  }
  return t;
}

json code_to_json(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat32).contiguous().flatten();
  return json(std::vector<float>(c.data_ptr<float>(), c.data_ptr<float>() + c.numel()));
}

std::string preview_url(const std::string& id, const Volume& v) {
  return "/slice/" + id + "?axis=axial&index=" + std::to_string(v.shape().d1 / 2);
}

json parse_body(const httplib::Request& req) {
  auto j = json::parse(req.body);
  if (!j.is_object()) throw FormatError("request body must be a JSON object");
  return j;
}

void send_json(httplib::Response& res, const json& j, int status = 200) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

template <class F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const json::exception& e) {
      send_json(res, {{"error", std::string("malformed request: ") + e.what()}}, 400);
    } catch (const FormatError& e) {
      send_json(res, {{"error", e.what()}}, 400);
    } catch (const NotFoundError& e) {
      send_json(res, {{"error", e.what()}}, 404);
    } catch (const ParameterError& e) {
      send_json(res, {{"error", e.what()}}, 422);
    } catch (const ShapeError& e) {
      send_json(res, {{"error", e.what()}}, 422);
    } catch (const InvariantError& e) {
      send_json(res, {{"error", e.what()}}, 422);
    } catch (const std::exception& e) {
      send_json(res, {{"error", e.what()}}, 500);
    }
  };
}

}  // namespace

VolumeStore::VolumeStore(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

std::string VolumeStore::content_id(const Volume& v) {
  const auto& s = v.shape();
  const std::string prefix = std::to_string(s.d1) + "," + std::to_string(s.d2) + "," + std::to_string(s.d3) + ";";
  return sha256_hex(prefix, v.data().data(), v.data().size() * sizeof(float));
}

std::filesystem::path VolumeStore::path_of(const std::string& id) const { return dir_ / (id + ".vgan"); }

std::string VolumeStore::put(const Volume& v, const std::string& provenance) {
  const auto id = content_id(v);
  std::lock_guard lock(mu_);
  const auto p = path_of(id);
  if (!std::filesystem::exists(p)) {
    const auto tmp = dir_ / (id + ".tmp");
    write_volume(v, tmp, provenance);
    std::filesystem::rename(tmp, p);
  }
  return id;
}

bool VolumeStore::contains(const std::string& id) const {
  return valid_id(id) && std::filesystem::exists(path_of(id));
}

Volume VolumeStore::get(const std::string& id) const {
  if (!contains(id)) throw NotFoundError("unknown volume id " + id);
  return read_volume(path_of(id));
}

std::string VolumeStore::raw(const std::string& id) const {
  if (!contains(id)) throw NotFoundError("unknown volume id " + id);
  std::ifstream in(path_of(id), std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Service::Service(ServiceConfig cfg) : cfg_(std::move(cfg)), store_(cfg_.store_dir) {
  cfg_.inversion.validate();
  auto add = [&](const std::filesystem::path& dir) {
    auto c = std::make_unique<Loaded>();
    c->name = dir.filename().string();
    c->model = load_checkpoint(dir);
    c->model.set_train(false);
    ckpts_.emplace(c->name, std::move(c));
  };
  if (!std::filesystem::is_directory(cfg_.checkpoint_dir))
    throw IoError("checkpoint directory " + cfg_.checkpoint_dir.string() + " does not exist");
  if (is_checkpoint_dir(cfg_.checkpoint_dir)) add(cfg_.checkpoint_dir);
  for (const auto& e : std::filesystem::directory_iterator(cfg_.checkpoint_dir))
    if (e.is_directory() && is_checkpoint_dir(e.path())) add(e.path());
  server_ = std::make_unique<httplib::Server>();
  routes();
}

Service::~Service() { stop(); }

std::vector<std::string> Service::checkpoint_names() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : ckpts_) out.push_back(k);
  return out;
}

Service::Loaded& Service::checkpoint(const std::string& name) {
  auto it = ckpts_.find(name);
  if (it == ckpts_.end()) throw NotFoundError("unknown checkpoint '" + name + "'");
  return *it->second;
}

const DirectionSet& Service::directions(Loaded& c, int64_t k) {
  auto it = c.directions.find(k);
  if (it == c.directions.end()) it = c.directions.emplace(k, find_model_directions(c.model, k)).first;
  return it->second;
}

int Service::start(const std::string& host, int port) {
  const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

void Service::listen(const std::string& host, int port) {
  if (!server_->listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
}

void Service::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

void Service::routes() {
  auto& s = *server_;

  s.Get("/health", [](const httplib::Request&, httplib::Response& res) { send_json(res, {{"status", "ok"}}); });

  s.Get("/checkpoints", guarded([this](const httplib::Request&, httplib::Response& res) {
    json list = json::array();
    for (auto& [name, c] : ckpts_) {
      const auto& m = c->model;
      list.push_back({{"checkpoint", name},
                      {"arch", to_string(m.cfg.arch)},
                      {"full_shape", {m.cfg.full_shape.d1, m.cfg.full_shape.d2, m.cfg.full_shape.d3}},
                      {"stage", m.stage.stage},
                      {"has_encoder", static_cast<bool>(m.encoder)},
                      {"has_w_bar", m.w_bar.has_value()}});
    }
    send_json(res, {{"checkpoints", list}});
  }));

  s.Post("/generate", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    auto& c = checkpoint(body.at("checkpoint").get<std::string>());
    std::lock_guard lock(c.mu);
    auto& m = c.model;
    if (body.contains("arch") && parse_arch(body["arch"].get<std::string>()) != m.cfg.arch)
      throw ParameterError("checkpoint '" + c.name + "' is " + to_string(m.cfg.arch));
    const int64_t count = body.value("count", int64_t{1});
    if (count < 1 || count > cfg_.max_count)
      throw ParameterError("count must lie in 1.." + std::to_string(cfg_.max_count));
    const uint64_t seed = body.value("seed", uint64_t{0});

    TruncationConfig tc;
    if (body.contains("truncation") && !body["truncation"].is_null()) {
      if (m.cfg.arch != Arch::ProGan) throw ParameterError("truncation level applies to ProGAN; use psi");
      tc.mode = TruncationMode::ProGanTruncNorm;
      tc.level = body["truncation"].get<double>();
    }
    if (body.contains("psi") && !body["psi"].is_null()) {
      if (m.cfg.arch != Arch::StyleGan) throw ParameterError("psi applies to StyleGAN; use truncation");
      tc.mode = TruncationMode::StyleGanPsi;
      tc.psi = body["psi"].get<double>();
      if (!(tc.psi >= 0.0 && tc.psi <= 1.0)) throw ParameterError("psi must lie in [0,1]");
      if (!m.w_bar) {
        m.w_bar = estimate_w_bar(m, cfg_.w_bar_samples, 0);
        m.w_bar_samples = cfg_.w_bar_samples;
      }
      tc.w_bar = *m.w_bar;
    }
    tc.validate();

    auto codes = sample_codes(m, tc, count, seed);
    json vols = json::array();
    torch::NoGradGuard ng;
    for (int64_t i = 0; i < count; ++i) {
      auto code = codes.slice(0, i, i + 1);
      auto v = to_volume(m.decode(code, NoiseSpec::pinned()));
      const auto id = store_.put(v, "generate:" + c.name);
      vols.push_back({{"id", id}, {"code", code_to_json(code)}, {"preview", preview_url(id, v)}});
    }
    send_json(res, {{"checkpoint", c.name}, {"arch", to_string(m.cfg.arch)}, {"seed", seed}, {"volumes", vols}});
  }));

  s.Post("/transition", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    auto& c = checkpoint(body.at("checkpoint").get<std::string>());
    std::lock_guard lock(c.mu);
    const auto dim = c.model.cfg.latent_dim;
    auto a = code_from_json(body.at("code_a"), dim, "code_a");
    auto b = code_from_json(body.at("code_b"), dim, "code_b");
    const auto alphas = transition_alphas(body.value("steps", int64_t{3}));
    auto frames = transition(c.model, a, b, alphas);
    json vols = json::array();
    for (size_t i = 0; i < frames.size(); ++i) {
      auto v = to_volume(frames[i]);
      const auto id = store_.put(v, "transition:" + c.name);
      vols.push_back({{"id", id}, {"alpha", alphas[i]}, {"preview", preview_url(id, v)}});
    }
    send_json(res, {{"checkpoint", c.name}, {"volumes", vols}});
  }));

  s.Post("/mix", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    auto& c = checkpoint(body.at("checkpoint").get<std::string>());
    std::lock_guard lock(c.mu);
    if (c.model.cfg.arch != Arch::StyleGan) throw ParameterError("style mixing needs a StyleGAN checkpoint");
    const auto dim = c.model.cfg.latent_dim;
    auto ws = code_from_json(body.at("source_code"), dim, "source_code");
    auto wt = code_from_json(body.at("target_code"), dim, "target_code");
    const int boundary = body.at("boundary").get<int>();
    auto v = to_volume(style_mix(c.model, ws, wt, boundary));
    const auto id = store_.put(v, "mix:" + c.name);
    send_json(res, {{"checkpoint", c.name}, {"id", id}, {"boundary", boundary}, {"preview", preview_url(id, v)}});
  }));

  s.Post("/invert", guarded([this](const httplib::Request& req, httplib::Response& res) {
    if (!req.has_param("checkpoint")) throw ParameterError("missing checkpoint parameter");
    auto& c = checkpoint(req.get_param_value("checkpoint"));
    Volume x;
    try {
      x = decode_volume(req.body);
    } catch (const InvariantError& e) {
      throw FormatError(e.what());
    } catch (const ShapeError& e) {
      throw FormatError(e.what());
    }
    InversionConfig icfg = cfg_.inversion;
    if (req.has_param("steps")) {
      try {
        icfg.refine_steps = std::stoll(req.get_param_value("steps"));
      } catch (const std::exception&) {
        throw ParameterError("steps must be an integer");
      }
    }
    icfg.validate();
    std::lock_guard lock(c.mu);
    if (!c.model.encoder) throw ParameterError("checkpoint '" + c.name + "' has no trained encoder");
    auto inv = invert(c.model, x, icfg);
    torch::Tensor recon;
    {
      torch::NoGradGuard ng;
      recon = c.model.decode(inv.code, NoiseSpec::pinned());
    }
    const auto in_id = store_.put(x, "upload");
    auto rv = to_volume(recon);
    const auto rec_id = store_.put(rv, "invert:" + c.name);
    send_json(res, {{"checkpoint", c.name},
                    {"volume_id", in_id},
                    {"code", code_to_json(inv.code)},
                    {"encoder_code", code_to_json(inv.encoder_code)},
                    {"reconstruction_id", rec_id},
                    {"preview", preview_url(rec_id, rv)},
                    {"objective_trace", inv.refinement.objective_trace},
                    {"best_step", inv.refinement.best_step},
                    {"initial_dist", inv.refinement.initial_dist},
                    {"final_dist", inv.refinement.best_dist},
                    {"warning", inv.refinement.warning}});
  }));

  s.Get(R"(/slice/([0-9a-fA-F]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const auto v = store_.get(req.matches[1]);
    const auto axis = parse_axis(req.has_param("axis") ? req.get_param_value("axis") : "axial");
    int64_t index = axis_extent(v.shape(), axis) / 2;
    if (req.has_param("index")) {
      try {
        index = std::stoll(req.get_param_value("index"));
      } catch (const std::exception&) {
        throw FormatError("index must be an integer");
      }
    }
    res.set_content(encode_png(extract_slice(v, axis, index)), "image/png");
  }));

  s.Get(R"(/volume/([0-9a-fA-F]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    res.set_content(store_.raw(req.matches[1]), "application/octet-stream");
  }));

  s.Get("/directions", guarded([this](const httplib::Request& req, httplib::Response& res) {
    if (!req.has_param("checkpoint")) throw ParameterError("missing checkpoint parameter");
    auto& c = checkpoint(req.get_param_value("checkpoint"));
    int64_t k = 4;
    if (req.has_param("k")) {
      try {
        k = std::stoll(req.get_param_value("k"));
      } catch (const std::exception&) {
        throw ParameterError("k must be an integer");
      }
    }
    std::lock_guard lock(c.mu);
    const auto& d = directions(c, k);
    json dirs = json::array();
    for (int64_t i = 0; i < d.directions.rows(); ++i) {
      std::vector<double> row(d.directions.cols());
      for (int64_t j = 0; j < d.directions.cols(); ++j) row[j] = d.directions(i, j);
      dirs.push_back(row);
    }
    std::vector<double> ev(d.eigenvalues.data(), d.eigenvalues.data() + d.eigenvalues.size());
    send_json(res, {{"checkpoint", c.name}, {"source", to_string(d.source)}, {"k", k}, {"directions", dirs},
                    {"eigenvalues", ev}});
  }));

  s.Post("/edit", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    auto& c = checkpoint(body.at("checkpoint").get<std::string>());
    const int64_t index = body.at("direction_index").get<int64_t>();
    const double strength = body.value("strength", 4.0);
    std::lock_guard lock(c.mu);
    auto& m = c.model;
    if (index < 1 || index > m.cfg.latent_dim)
      throw ParameterError("direction_index must lie in 1.." + std::to_string(m.cfg.latent_dim));
    const auto& d = directions(c, std::max<int64_t>(4, index));
    auto n = d.direction(index - 1);

    torch::Tensor original, code;
    std::string original_id;
    if (body.contains("volume_id")) {
      original_id = body["volume_id"].get<std::string>();
      const auto x = store_.get(original_id);
      InversionConfig icfg = cfg_.inversion;
      if (body.contains("steps")) icfg.refine_steps = body["steps"].get<int64_t>();
      icfg.validate();
      if (!m.encoder) throw ParameterError("checkpoint '" + c.name + "' has no trained encoder");
      code = invert(m, x, icfg).code;
      original = to_tensor(x);
    } else if (body.contains("code")) {
      code = code_from_json(body["code"], m.cfg.latent_dim, "code");
      torch::NoGradGuard ng;
      original = m.decode(code, NoiseSpec::pinned());
      original_id = store_.put(to_volume(original), "edit-source:" + c.name);
    } else {
      throw ParameterError("edit needs volume_id or code");
    }
    auto r = edit_code(m, original, code, n, strength);
    auto ev = to_volume(r.edited);
    const auto edited_id = store_.put(ev, "edit:" + c.name);
    const auto residual_id = store_.put(to_volume(r.residual), "residual:" + c.name);
    const auto recon_id = store_.put(to_volume(r.reconstruction), "reconstruction:" + c.name);
    send_json(res, {{"checkpoint", c.name},
                    {"id", edited_id},
                    {"residual_id", residual_id},
                    {"reconstruction_id", recon_id},
                    {"original_id", original_id},
                    {"code", code_to_json(r.code)},
                    {"direction_index", index},
                    {"strength", strength},
                    {"preview", preview_url(edited_id, ev)}});
  }));
}

}  // namespace vgan
