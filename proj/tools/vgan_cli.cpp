#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "vgan/checkpoint.hpp"
#include "vgan/errors.hpp"
#include "vgan/feature_extractor.hpp"
#include "vgan/inversion.hpp"
#include "vgan/latent_tools.hpp"
#include "vgan/metrics.hpp"
#include "vgan/phantom.hpp"
#include "vgan/preprocess.hpp"
#include "vgan/service.hpp"
#include "vgan/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vgan;

namespace {

Shape3 parse_shape(const std::string& s) {
  Shape3 out;
  char c1 = 0, c2 = 0;
  std::istringstream in(s);
  if (!(in >> out.d1 >> c1 >> out.d2 >> c2 >> out.d3) || c1 != ',' || c2 != ',' || !out.valid())
    throw ParameterError("shape must look like 32,64,64");
  return out;
}

std::vector<Volume> load_dir(const fs::path& dir) {
  std::vector<Volume> out;
  for (const auto& p : list_volumes(dir)) out.push_back(read_volume(p));
  if (out.empty()) throw IoError("no .vgan volumes in " + dir.string());
  return out;
}

void write_code(const fs::path& path, const torch::Tensor& code, const GanModel& m, const std::string& provenance) {
  auto c = code.detach().to(torch::kFloat32).contiguous().flatten();
  json j{{"code", std::vector<float>(c.data_ptr<float>(), c.data_ptr<float>() + c.numel())},
         {"arch", to_string(m.cfg.arch)},
         {"space", m.cfg.arch == Arch::ProGan ? "z" : "w"},
         {"provenance", provenance}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

torch::Tensor read_code(const fs::path& path, int64_t dim) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  json j = json::parse(in);
  const json& arr = j.is_object() ? j.at("code") : j;
  if (!arr.is_array() || static_cast<int64_t>(arr.size()) != dim)
    throw FormatError(path.string() + " must hold " + std::to_string(dim) + " numbers");
  auto t = torch::empty({1, dim});
  for (int64_t i = 0; i < dim; ++i) t[0][i] = arr[i].get<float>();
  return t;
}

std::string indexed(const std::string& prefix, int64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04lld.vgan", prefix.c_str(), static_cast<long long>(i));
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Volumetric GAN toolkit: phantoms, preprocessing, training, inversion, latent editing, metrics"};
  app.require_subcommand(1);

  // phantom
  auto* ph = app.add_subcommand("phantom", "Write procedural bone phantoms");
  fs::path ph_out;
  int64_t ph_count = 16;
  std::string ph_shape = "32,64,64";
  uint64_t ph_seed = 0;
  bool ph_classes = false;
  ph->add_option("--out-dir", ph_out, "Output directory")->required();
  ph->add_option("--count", ph_count, "Number of volumes");
  ph->add_option("--shape", ph_shape, "d1,d2,d3");
  ph->add_option("--seed", ph_seed);
  ph->add_flag("--classes", ph_classes, "Two-class thin/thick cortex corpus with labels.json");

  // preprocess
  auto* pp = app.add_subcommand("preprocess", "Crop/pad, denoise padding, subsample, split and augment scans");
  fs::path pp_in, pp_out;
  PreprocessConfig pp_cfg;
  std::string pp_target = "168,576,448";
  uint64_t pp_seed = 0;
  bool pp_no_norm = false;
  pp->add_option("--in-dir", pp_in)->required();
  pp->add_option("--out-dir", pp_out)->required();
  pp->add_option("--target-shape,--target", pp_target, "Constant crop/pad extent d1,d2,d3");
  pp->add_option("--clip,--dct-clip", pp_cfg.dct_clip);
  pp->add_option("--subsample", pp_cfg.subsample_factor);
  pp->add_option("--stack-depth", pp_cfg.stack_depth);
  pp->add_option("--stacks,--n-stacks", pp_cfg.n_stacks);
  pp->add_option("--aug-per-stack", pp_cfg.aug_per_stack);
  pp->add_option("--seed", pp_seed);
  pp->add_flag("--no-normalize", pp_no_norm, "Skip corpus min/max rescaling");

  // train
  auto* tr = app.add_subcommand("train", "Progressive WGAN-GP training");
  fs::path tr_data, tr_out;
  std::string tr_arch = "progan", tr_shape;
  TrainConfig tr_cfg;
  bool tr_desk = false;
  int64_t tr_channels = 4, tr_steps = 0;
  tr->add_option("--data-dir", tr_data)->required();
  tr->add_option("--out-dir", tr_out)->required();
  tr->add_option("--arch", tr_arch)->check(CLI::IsMember({"progan", "stylegan"}));
  tr->add_flag("--desk-scale", tr_desk, "300 generator steps per stage");
  tr->add_option("--steps-per-stage", tr_steps);
  tr->add_option("--channels", tr_channels, "Base channel count c for generator and critic");
  tr->add_option("--n-critic", tr_cfg.n_critic);
  tr->add_option("--lr-g", tr_cfg.lr_g);
  tr->add_option("--lr-c", tr_cfg.lr_c);
  tr->add_option("--p1", tr_cfg.p1);
  tr->add_option("--p2", tr_cfg.p2);
  tr->add_option("--grad-clip", tr_cfg.grad_clip_norm);
  tr->add_option("--lr-decay", tr_cfg.lr_decay_per_stage);
  tr->add_option("--map-lr-mult", tr_cfg.map_lr_mult);
  tr->add_option("--val-fraction", tr_cfg.val_fraction);
  tr->add_option("--log-every", tr_cfg.log_every);
  tr->add_option("--val-every", tr_cfg.val_every);
  tr->add_option("--checkpoint-every", tr_cfg.checkpoint_every);
  tr->add_flag("--early-stop", tr_cfg.early_stop_on_overfit);
  tr->add_option("--seed", tr_cfg.seed);

  // train-encoder
  auto* te = app.add_subcommand("train-encoder", "Train the inversion encoder against a frozen checkpoint");
  fs::path te_ckpt, te_data, te_out;
  InversionConfig te_cfg;
  te->add_option("--checkpoint", te_ckpt)->required();
  te->add_option("--data-dir", te_data)->required();
  te->add_option("--out", te_out, "Output checkpoint dir (default: overwrite input)");
  te->add_option("--steps", te_cfg.encoder_steps);
  te->add_option("--batch", te_cfg.encoder_batch);
  te->add_option("--seed", te_cfg.seed);

  // invert
  auto* inv = app.add_subcommand("invert", "Encoder guess plus refinement for one volume");
  fs::path inv_ckpt, inv_in, inv_out, inv_recon;
  std::string inv_arch;
  InversionConfig inv_cfg;
  inv->add_option("--checkpoint", inv_ckpt)->required();
  inv->add_option("--input", inv_in)->required();
  inv->add_option("--arch", inv_arch)->check(CLI::IsMember({"progan", "stylegan"}));
  inv->add_option("--steps", inv_cfg.refine_steps);
  inv->add_option("--out", inv_out, "Code JSON")->required();
  inv->add_option("--recon", inv_recon, "Optional reconstruction .vgan");

  // generate
  auto* gen = app.add_subcommand("generate", "Sample volumes");
  fs::path gen_ckpt, gen_out;
  int64_t gen_count = 1;
  uint64_t gen_seed = 0;
  std::optional<double> gen_trunc, gen_psi;
  gen->add_option("--checkpoint", gen_ckpt)->required();
  gen->add_option("--out-dir", gen_out)->required();
  gen->add_option("--count", gen_count);
  gen->add_option("--seed", gen_seed);
  gen->add_option("--truncation", gen_trunc, "ProGAN truncated-normal level");
  gen->add_option("--psi", gen_psi, "StyleGAN psi in [0,1]");

  // transition
  auto* trn = app.add_subcommand("transition", "Interpolate between two codes");
  fs::path trn_ckpt, trn_a, trn_b, trn_out;
  int64_t trn_steps = 3;
  trn->add_option("--checkpoint", trn_ckpt)->required();
  trn->add_option("--code-a", trn_a)->required();
  trn->add_option("--code-b", trn_b)->required();
  trn->add_option("--steps", trn_steps, "Interior frames; alpha = i/(steps+1)");
  trn->add_option("--out-dir", trn_out)->required();

  // mix
  auto* mix = app.add_subcommand("mix", "Style mixing between source and target codes");
  fs::path mix_ckpt, mix_s, mix_t, mix_out;
  int mix_boundary = 7;
  mix->add_option("--checkpoint", mix_ckpt)->required();
  mix->add_option("--source", mix_s)->required();
  mix->add_option("--target", mix_t)->required();
  mix->add_option("--boundary", mix_boundary, "Layers 1..a take source styles");
  mix->add_option("--out", mix_out)->required();

  // directions
  auto* dir = app.add_subcommand("directions", "Leading eigen-directions of the generator's first linear map(s)");
  fs::path dir_ckpt, dir_out;
  std::string dir_arch;
  int64_t dir_k = 4;
  dir->add_option("--checkpoint", dir_ckpt)->required();
  dir->add_option("--arch", dir_arch)->check(CLI::IsMember({"progan", "stylegan"}));
  dir->add_option("--k", dir_k);
  dir->add_option("--out", dir_out, "JSON output (default stdout)");

  // edit
  auto* ed = app.add_subcommand("edit", "Invert a volume and push it along a direction");
  fs::path ed_ckpt, ed_in, ed_out, ed_res;
  int64_t ed_index = 1;
  double ed_strength = 4.0;
  InversionConfig ed_cfg;
  ed->add_option("--checkpoint", ed_ckpt)->required();
  ed->add_option("--input", ed_in)->required();
  ed->add_option("--direction-index", ed_index, "1-based");
  ed->add_option("--strength", ed_strength);
  ed->add_option("--steps", ed_cfg.refine_steps);
  ed->add_option("--out", ed_out)->required();
  ed->add_option("--residual-out", ed_res);

  // train-extractor
  auto* tx = app.add_subcommand("train-extractor", "Train the toy3d feature extractor on thin/thick phantoms");
  fs::path tx_out;
  int64_t tx_count = 200;
  std::string tx_shape = "32,64,64";
  ToyTrainConfig tx_cfg;
  tx->add_option("--out", tx_out)->required();
  tx->add_option("--count", tx_count);
  tx->add_option("--shape", tx_shape);
  tx->add_option("--epochs", tx_cfg.epochs);
  tx->add_option("--feature-dim", tx_cfg.feature_dim);
  tx->add_option("--seed", tx_cfg.seed);

  // metrics
  auto* me = app.add_subcommand("metrics", "FID, precision/recall and realism between two volume sets");
  fs::path me_real, me_gen, me_path;
  std::string me_ext = "toy3d";
  int me_k = 3;
  uint64_t me_seed = 0;
  me->add_option("--real-dir", me_real)->required();
  me->add_option("--gen-dir", me_gen)->required();
  me->add_option("--extractor", me_ext)->check(CLI::IsMember({"inc2d", "res3d", "vgs3d", "toy3d"}));
  me->add_option("--extractor-path", me_path, "Model file for toy3d/res3d/vgs3d, optional slice model for inc2d");
  me->add_option("--k", me_k);
  me->add_option("--seed", me_seed);

  // serve
  auto* sv = app.add_subcommand("serve", "HTTP service");
  ServiceConfig sv_cfg;
  std::string sv_host = "127.0.0.1";
  int sv_port = 8080;
  sv->add_option("--checkpoint-dir", sv_cfg.checkpoint_dir)->required();
  sv->add_option("--store-dir", sv_cfg.store_dir, "Volume store (default <checkpoint-dir>/store)");
  sv->add_option("--host", sv_host);
  sv->add_option("--port", sv_port);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ph) {
      fs::create_directories(ph_out);
      const auto shape = parse_shape(ph_shape);
      auto corpus = ph_classes ? make_thickness_classes(ph_count, shape, ph_seed) : make_phantom_corpus(ph_count, shape, ph_seed);
      json labels = json::object();
      for (size_t i = 0; i < corpus.size(); ++i) {
        const auto name = indexed("phantom", static_cast<int64_t>(i));
        write_volume(corpus[i].volume, ph_out / name, "phantom");
        labels[name] = corpus[i].label;
      }
      if (ph_classes) std::ofstream(ph_out / "labels.json") << labels.dump(2) << '\n';
      std::cout << "wrote " << corpus.size() << " phantoms to " << ph_out << '\n';
    } else if (*pp) {
      pp_cfg.target_shape = parse_shape(pp_target);
      validate(pp_cfg);
      fs::create_directories(pp_out);
      std::vector<Volume> out;
      const auto inputs = list_volumes(pp_in);
      if (inputs.empty()) throw IoError("no .vgan volumes in " + pp_in.string());
      for (size_t i = 0; i < inputs.size(); ++i) {
        auto stacks = preprocess_volume(read_volume(inputs[i]), pp_cfg, pp_seed, i);
        out.insert(out.end(), stacks.begin(), stacks.end());
      }
      if (!pp_no_norm) normalize_corpus(out);
      for (size_t i = 0; i < out.size(); ++i) write_volume(out[i], pp_out / indexed("stack", static_cast<int64_t>(i)), "preprocess");
      std::cout << "wrote " << out.size() << " stacks to " << pp_out << '\n';
    } else if (*tr) {
      auto corpus = load_dir(tr_data);
      if (tr_desk) tr_cfg.steps_per_stage = 300;
      if (tr_steps > 0) tr_cfg.steps_per_stage = tr_steps;
      ModelConfig mc;
      mc.arch = parse_arch(tr_arch);
      mc.full_shape = corpus.front().shape();
      mc.gen_channels = mc.critic_channels = tr_channels;
      auto model = GanModel::create(mc, tr_cfg.seed);
      JsonlTrainSink sink(tr_out, true);
      Trainer trainer(model, std::move(corpus), tr_cfg, sink);
      auto stats = trainer.run();
      if (mc.arch == Arch::StyleGan) {
        model.w_bar = estimate_w_bar(model, 10000, tr_cfg.seed);
        model.w_bar_samples = 10000;
      }
      save_checkpoint(model, tr_out / "final");
      std::cout << "generator steps " << stats.generator_steps << ", critic steps " << stats.critic_steps
                << "; final checkpoint " << (tr_out / "final") << '\n';
    } else if (*te) {
      auto model = load_checkpoint(te_ckpt);
      auto res = train_encoder(model, load_dir(te_data), te_cfg);
      const auto dest = te_out.empty() ? te_ckpt : te_out;
      save_checkpoint(model, dest);
      std::cout << "encoder objective " << (res.objective_trace.empty() ? 0.0 : res.objective_trace.front()) << " -> "
                << (res.objective_trace.empty() ? 0.0 : res.objective_trace.back()) << "; saved " << dest << '\n';
    } else if (*inv) {
      auto model = load_checkpoint(inv_ckpt);
      if (!inv_arch.empty() && parse_arch(inv_arch) != model.cfg.arch) throw ParameterError("--arch does not match the checkpoint");
      auto r = invert(model, read_volume(inv_in), inv_cfg);
      write_code(inv_out, r.code, model, "invert:" + inv_in.string());
      if (!inv_recon.empty()) {
        torch::NoGradGuard ng;
        write_volume(to_volume(model.decode(r.code, NoiseSpec::pinned())), inv_recon, "reconstruction");
      }
      std::cout << "dist " << r.refinement.initial_dist << " -> " << r.refinement.best_dist
                << (r.refinement.warning ? " (non-finite objective encountered)" : "") << '\n';
    } else if (*gen) {
      auto model = load_checkpoint(gen_ckpt);
      TruncationConfig tc;
      if (gen_trunc) {
        tc.mode = TruncationMode::ProGanTruncNorm;
        tc.level = *gen_trunc;
      }
      if (gen_psi) {
        tc.mode = TruncationMode::StyleGanPsi;
        tc.psi = *gen_psi;
        if (!model.w_bar && model.cfg.arch == Arch::StyleGan) model.w_bar = estimate_w_bar(model);
        tc.w_bar = model.w_bar;
      }
      auto codes = sample_codes(model, tc, gen_count, gen_seed);
      fs::create_directories(gen_out);
      torch::NoGradGuard ng;
      for (int64_t i = 0; i < gen_count; ++i) {
        auto code = codes.slice(0, i, i + 1);
        write_volume(to_volume(model.decode(code, NoiseSpec::pinned())), gen_out / indexed("gen", i), "generate");
        write_code(gen_out / ("gen_" + std::to_string(i) + ".code.json"), code, model, "generate");
      }
      std::cout << "wrote " << gen_count << " volumes to " << gen_out << '\n';
    } else if (*trn) {
      auto model = load_checkpoint(trn_ckpt);
      const auto alphas = transition_alphas(trn_steps);
      auto frames = transition(model, read_code(trn_a, model.cfg.latent_dim), read_code(trn_b, model.cfg.latent_dim), alphas);
      fs::create_directories(trn_out);
      for (size_t i = 0; i < frames.size(); ++i)
        write_volume(to_volume(frames[i]), trn_out / indexed("transition", static_cast<int64_t>(i)),
                     "transition alpha=" + std::to_string(alphas[i]));
      std::cout << "wrote " << frames.size() << " frames to " << trn_out << '\n';
    } else if (*mix) {
      auto model = load_checkpoint(mix_ckpt);
      auto out = style_mix(model, read_code(mix_s, model.cfg.latent_dim), read_code(mix_t, model.cfg.latent_dim), mix_boundary);
      write_volume(to_volume(out), mix_out, "mix boundary=" + std::to_string(mix_boundary));
    } else if (*dir) {
      auto model = load_checkpoint(dir_ckpt);
      if (!dir_arch.empty() && parse_arch(dir_arch) != model.cfg.arch) throw ParameterError("--arch does not match the checkpoint");
      auto d = find_model_directions(model, dir_k);
      json j{{"source", to_string(d.source)}, {"k", dir_k}};
      j["eigenvalues"] = std::vector<double>(d.eigenvalues.data(), d.eigenvalues.data() + d.eigenvalues.size());
      j["directions"] = json::array();
      for (int64_t i = 0; i < d.directions.rows(); ++i) {
        Eigen::VectorXd row = d.directions.row(i).transpose();
        j["directions"].push_back(std::vector<double>(row.data(), row.data() + row.size()));
      }
      if (dir_out.empty()) {
        std::cout << j.dump() << '\n';
      } else {
        std::ofstream(dir_out) << j.dump() << '\n';
      }
    } else if (*ed) {
      auto model = load_checkpoint(ed_ckpt);
      if (ed_index < 1 || ed_index > model.cfg.latent_dim) throw ParameterError("--direction-index must be >= 1");
      auto d = find_model_directions(model, std::max<int64_t>(4, ed_index));
      auto r = edit(model, read_volume(ed_in), d.direction(ed_index - 1), ed_strength, ed_cfg);
      write_volume(to_volume(r.edited), ed_out, "edit");
      if (!ed_res.empty()) write_volume(to_volume(r.residual), ed_res, "residual");
    } else if (*tx) {
      auto corpus = make_thickness_classes(tx_count, parse_shape(tx_shape), tx_cfg.seed);
      auto res = train_toy_extractor(corpus, tx_cfg);
      for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
      save_toy_extractor(res.model, tx_out);
      std::cout << "held-out accuracy " << res.test_accuracy << " on " << res.n_test << " volumes; saved " << tx_out << '\n';
    } else if (*me) {
      auto ext = make_extractor(me_ext, me_path);
      auto real = ext->extract(load_dir(me_real), me_seed);
      auto genf = ext->extract(load_dir(me_gen), me_seed + 1);
      const auto pr = precision_recall(real, genf, me_k);
      const auto radii = knn_radii(real.features, me_k);
      std::vector<double> scores;
      for (int64_t i = 0; i < genf.size(); ++i) scores.push_back(realism(real, radii, genf.features.row(i).transpose()));
      const auto h = histogram(scores, 10);
      json j{{"extractor", me_ext}, {"fid", fid(real, genf)}, {"precision", pr.precision}, {"recall", pr.recall},
             {"realism_histogram", {{"edges", h.edges}, {"counts", h.counts}}}};
      std::cout << j.dump(2) << '\n';
    } else if (*sv) {
      if (sv_cfg.store_dir.empty()) sv_cfg.store_dir = sv_cfg.checkpoint_dir / "store";
      Service service(sv_cfg);
      std::cerr << "serving " << service.checkpoint_names().size() << " checkpoint(s) on http://" << sv_host << ':'
                << sv_port << '\n';
      service.listen(sv_host, sv_port);
    }
  } catch (const vgan::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
