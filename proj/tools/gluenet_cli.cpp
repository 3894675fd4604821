#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gluenet/gluenet.hpp"

#ifndef GLUENET_VERSION
#define GLUENET_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace gluenet;
using json = nlohmann::ordered_json;

namespace {

enum Exit : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kMissingFlag = 3,
  kIoError = 4,
  kFormat = 5,
  kShape = 6,
  kFusion = 7,
  kDigestError = 8,
  kDiverged = 9,
  kInvalidValue = 10,
};

constexpr const char* kExitCodeHelp =
    "Exit codes:\n"
    "  0  success\n"
    "  1  internal error\n"
    "  2  unknown flag or bad usage\n"
    "  3  missing required flag\n"
    "  4  file I/O error\n"
    "  5  malformed file (bad magic, version, truncated, overflow)\n"
    "  6  shape, count or configuration error\n"
    "  7  fusion window violates 2k < L\n"
    "  8  checkpoint configuration digest mismatch\n"
    "  9  training diverged (non-finite loss)\n"
    " 10  invalid flag value\n"
    "Errors are reported on stderr as: error code=<n> kind=<kind> msg=\"<message>\"";

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::kIo: return kIoError;
    case ErrorKind::kBadMagic:
    case ErrorKind::kVersion:
    case ErrorKind::kTruncated:
    case ErrorKind::kOverflow: return kFormat;
    case ErrorKind::kDimension:
    case ErrorKind::kConfig:
    case ErrorKind::kDegenerateWeights:
    case ErrorKind::kEmptyBatch:
    case ErrorKind::kDuplicateId:
    case ErrorKind::kCountMismatch:
    case ErrorKind::kEmptyJoin: return kShape;
    case ErrorKind::kFusionWindow: return kFusion;
    case ErrorKind::kDigest: return kDigestError;
    case ErrorKind::kNumeric: return kDiverged;
    case ErrorKind::kContract: return kInternal;
  }
  return kInternal;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out.push_back(c);
  }
  return out;
}

int report(int code, const std::string& kind, const std::string& msg) {
  std::cerr << "error code=" << code << " kind=" << kind << " msg=\"" << escape(msg) << "\"\n";
  return code;
}

std::string file_digest(const std::string& path) { return to_hex(sha256(io::read_file(path))); }

// Records the command, every option's resolved value, and digests of the
// declared inputs and outputs.
class Manifest {
 public:
  Manifest(const CLI::App& sub, std::uint64_t seed) {
    doc_["command"] = sub.get_name();
    doc_["tool_version"] = GLUENET_VERSION;
    json flags = json::object();
    for (const CLI::Option* opt : sub.get_options()) {
      const std::string name = opt->get_single_name();
      if (name == "help" || name.empty()) continue;
      std::string value;
      if (opt->count() > 0) {
        const auto& res = opt->results();
        for (std::size_t i = 0; i < res.size(); ++i) value += (i ? "," : "") + res[i];
        if (value.empty() && opt->get_expected_max() == 0) value = "true";
      } else {
        value = opt->get_default_str();
        if (value.empty() && opt->get_expected_max() == 0) value = "false";
      }
      flags[name] = value;
    }
    doc_["flags"] = flags;
    doc_["seed"] = seed;
    doc_["inputs"] = json::object();
    doc_["outputs"] = json::object();
  }

  void input(const std::string& path) { doc_["inputs"][path] = file_digest(path); }
  void output(const std::string& path) { doc_["outputs"][path] = file_digest(path); }
  json& doc() { return doc_; }

  void write(const std::string& path) const { io::write_file(path, doc_.dump(2) + "\n"); }

 private:
  json doc_;
};

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorKind::kIo, "cannot create directory " + dir + ": " + ec.message());
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

GlueNetEncoder<float> encoder_of(const Checkpoint& ck) {
  return GlueNetEncoder<float>(ck.gcfg, ck.encoder.clone());
}

// ---------------------------------------------------------------------------

struct GenSynthArgs {
  std::uint64_t seed = 0;
  std::size_t l_in = 8, c_in = 16, l_out = 8, c_out = 16, count = 1024;
  std::string transform = "orthogonal-rotation";
  double noise = 0.0;
  std::string out_src, out_tgt;
};

int cmd_gen_synth(const CLI::App& sub, const GenSynthArgs& a) {
  SyntheticEncoderSpec spec;
  spec.seed = a.seed;
  spec.l_in = a.l_in;
  spec.c_in = a.c_in;
  spec.l_out = a.l_out;
  spec.c_out = a.c_out;
  spec.transform = parse_transform(a.transform);
  spec.noise_sigma = a.noise;
  const auto sc = gen_synthetic_pair(spec, a.count);
  write_gge(sc.corpus.source, a.out_src);
  write_gge(sc.corpus.target, a.out_tgt);
  Manifest m(sub, a.seed);
  m.output(a.out_src);
  m.output(a.out_tgt);
  m.write(a.out_src + ".manifest.json");
  return kOk;
}

struct TrainArgs {
  std::string src, tgt, config, weights_from, out_dir, resume;
  double lr = 1e-4, lambda_mse = 1.0, lambda_adv = 0.0, lambda_rec = 1.0;
  std::uint64_t steps = 1000, batch = 32, seed = 0, checkpoint_every = 0;
  bool reweight = false;
};

int cmd_train(const CLI::App& sub, const TrainArgs& a) {
  const GlueNetConfig gcfg = GlueNetConfig::load(a.config);
  TrainConfig tcfg;
  tcfg.lr = a.lr;
  tcfg.steps = a.steps;
  tcfg.batch_size = a.batch;
  tcfg.loss_weights = {a.lambda_mse, a.lambda_adv, a.lambda_rec};
  tcfg.seed = a.seed;
  tcfg.checkpoint_every = a.checkpoint_every;
  tcfg.reweight = a.reweight;
  tcfg.weights_from = a.weights_from;
  tcfg.validate();

  Manifest m(sub, a.seed);
  m.input(a.src);
  m.input(a.tgt);
  m.input(a.config);
  if (!a.weights_from.empty()) m.input(a.weights_from);
  if (!a.resume.empty()) m.input(a.resume);

  Trainer<float> trainer(gcfg, tcfg, pair(a.src, a.tgt));
  if (!a.resume.empty()) {
    restore(trainer, load_checkpoint(a.resume, gcfg));
  } else if (tcfg.reweight) {
    const EmbeddingStore ref =
        a.weights_from.empty() ? trainer.corpus().target : read_gge(a.weights_from);
    require(ref.tokens == gcfg.token_out && ref.dim == gcfg.dim_out, ErrorKind::kDimension,
            "weights-from store does not match the encoder output shape");
    trainer.set_token_weights(
        token_weights<float>(ref.records, ref.count, ref.tokens, ref.dim));
  }

  ensure_dir(a.out_dir);
  const std::string loss_path = join(a.out_dir, "loss.csv");
  std::ofstream loss(loss_path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(loss), ErrorKind::kIo, "cannot create " + loss_path);
  loss << kLossCsvHeader << '\n';

  std::vector<std::string> written;
  auto save = [&](const std::string& name) {
    const std::string p = join(a.out_dir, name);
    save_checkpoint(p, capture(trainer));
    written.push_back(p);
  };
  trainer.run_until(tcfg.steps, [&](std::uint64_t step, const LossReport& r) {
    write_loss_row(loss, step, r);
    if (tcfg.checkpoint_every > 0 && step % tcfg.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "ckpt-%06llu.ggck", static_cast<unsigned long long>(step));
      save(name);
    }
  });
  loss.flush();
  require(static_cast<bool>(loss), ErrorKind::kIo, "write failed: " + loss_path);
  loss.close();
  save("final.ggck");

  m.output(loss_path);
  for (const auto& p : written) m.output(p);
  m.doc()["final_step"] = trainer.step_count();
  m.write(join(a.out_dir, "manifest.json"));
  std::cout << "trained to step " << trainer.step_count() << ", checkpoint "
            << join(a.out_dir, "final.ggck") << '\n';
  return kOk;
}

int cmd_translate(const CLI::App& sub, const std::string& ckpt, const std::string& in,
                  const std::string& out) {
  const Checkpoint ck = load_checkpoint(ckpt);
  const EmbeddingStore y = translate(encoder_of(ck), read_gge(in));
  write_gge(y, out);
  Manifest m(sub, ck.tcfg.seed);
  m.input(ckpt);
  m.input(in);
  m.output(out);
  m.write(out + ".manifest.json");
  return kOk;
}

int cmd_fuse(const CLI::App& sub, const std::string& a, const std::string& b, std::size_t k,
             const std::string& out) {
  const EmbeddingStore fused = topk_fuse(read_gge(a), read_gge(b), FusionParams{k});
  write_gge(fused, out);
  Manifest m(sub, 0);
  m.input(a);
  m.input(b);
  m.output(out);
  m.write(out + ".manifest.json");
  return kOk;
}

int cmd_diagnose(const CLI::App& sub, const std::string& ckpt, const std::string& src,
                 const std::string& tgt, const std::string& out_dir) {
  const Checkpoint ck = load_checkpoint(ckpt);
  const auto encoder = encoder_of(ck);
  const GlueNetDecoder<float> decoder(ck.gcfg.mirror(), ck.decoder.clone());
  const ParallelCorpus corpus = pair(src, tgt);
  const EmbeddingStore translated = translate(encoder, corpus.source);

  const std::vector<ProjectionGroup> groups{
      {"source", &corpus.source}, {"translated", &translated}, {"target", &corpus.target}};
  const ProjectionResult proj = pca_project(groups);
  const LoopStability ls = loop_stability_eval(encoder, decoder, corpus.source);
  const double ratio = separation_ratio(proj, "translated", "target");

  ensure_dir(out_dir);
  const std::string proj_path = join(out_dir, "projection.csv");
  const std::string diss_path = join(out_dir, "dissimilarity.csv");
  const std::string stab_path = join(out_dir, "loop_stability.txt");
  export_projection_csv(proj, proj_path);
  export_dissimilarity_csv(dissimilarity_map(corpus.target), corpus.target.tokens, diss_path);
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "e1 = %.9g\ne2 = %.9g\nseparation_ratio = %.9g\n"
                "explained_variance = %.9g,%.9g\ntotal_variance = %.9g\n",
                ls.e1, ls.e2, ratio, proj.explained_variance[0], proj.explained_variance[1],
                proj.total_variance);
  io::write_file(stab_path, buf);
  std::cout << buf;

  Manifest m(sub, ck.tcfg.seed);
  m.input(ckpt);
  m.input(src);
  m.input(tgt);
  m.output(proj_path);
  m.output(diss_path);
  m.output(stab_path);
  m.write(join(out_dir, "manifest.json"));
  return kOk;
}

int cmd_param_count(const std::string& config) {
  std::cout << param_count(GlueNetConfig::load(config)) << '\n';
  return kOk;
}

int cmd_inspect(const std::string& path) {
  const std::string bytes = io::read_file(path);
  io::Reader r(bytes, path);
  const std::string_view magic = bytes.substr(0, std::min<std::size_t>(4, bytes.size()));
  if (magic == std::string_view(kGgeMagic, 4)) {
    const GgeHeader h = decode_gge_header(r);
    std::cout << "format = GGE\nversion = " << h.version << "\ncount = " << h.count
              << "\ntokens = " << h.tokens << "\ndim = " << h.dim << "\nflags = " << h.flags
              << "\nhas_ids = " << (h.has_ids() ? "true" : "false")
              << "\nfile_bytes = " << bytes.size() << '\n';
    return kOk;
  }
  if (magic == std::string_view(kCkptMagic, 4)) {
    const CheckpointHeader h = decode_checkpoint_header(r);
    std::cout << "format = GGCK\nversion = " << h.version << "\nconfig_digest = "
              << to_hex(h.digest) << "\nfile_bytes = " << bytes.size() << '\n'
              << h.config_text;
    return kOk;
  }
  fail(ErrorKind::kBadMagic, path + ": unrecognized magic (expected GGEM or GGCK)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GlueNet embedding-space translation toolkit", "gluenet"};
  app.footer(kExitCodeHelp);
  app.require_subcommand(0, 1);
  app.option_defaults()->always_capture_default();
  app.set_version_flag("--version", GLUENET_VERSION);

  GenSynthArgs gs;
  auto* gen = app.add_subcommand("gen-synth", "Generate a synthetic parallel corpus");
  gen->add_option("--seed", gs.seed, "RNG seed");
  gen->add_option("--l-in", gs.l_in, "Source token count")->check(CLI::PositiveNumber);
  gen->add_option("--c-in", gs.c_in, "Source channel count")->check(CLI::PositiveNumber);
  gen->add_option("--l-out", gs.l_out, "Target token count")->check(CLI::PositiveNumber);
  gen->add_option("--c-out", gs.c_out, "Target channel count")->check(CLI::PositiveNumber);
  gen->add_option("--transform", gs.transform, "Ground-truth map")
      ->check(CLI::IsMember({"orthogonal-rotation", "token-permutation-plus-rotation",
                             "random-two-layer-net"}));
  gen->add_option("--noise", gs.noise, "Target noise standard deviation")
      ->check(CLI::NonNegativeNumber);
  gen->add_option("--count", gs.count, "Number of records");
  gen->add_option("--out-src", gs.out_src, "Output source GGE file")->required();
  gen->add_option("--out-tgt", gs.out_tgt, "Output target GGE file")->required();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train encoder, decoder and discriminator");
  train->add_option("--src", ta.src, "Source GGE file")->required();
  train->add_option("--tgt", ta.tgt, "Target GGE file")->required();
  train->add_option("--config", ta.config, "GlueNet config text file")->required();
  train->add_option("--lr", ta.lr, "Learning rate")->check(CLI::PositiveNumber);
  train->add_option("--steps", ta.steps, "Total optimizer steps");
  train->add_option("--batch", ta.batch, "Batch size")->check(CLI::PositiveNumber);
  train->add_option("--lambda-mse", ta.lambda_mse, "Alignment loss weight")
      ->check(CLI::NonNegativeNumber);
  train->add_option("--lambda-adv", ta.lambda_adv, "Adversarial loss weight")
      ->check(CLI::NonNegativeNumber);
  train->add_option("--lambda-rec", ta.lambda_rec, "Reconstruction loss weight")
      ->check(CLI::NonNegativeNumber);
  train->add_flag("--reweight", ta.reweight, "Use the token-reweighted alignment loss");
  train->add_option("--weights-from", ta.weights_from,
                    "GGE target batch for token weights (default: the target store)");
  train->add_option("--seed", ta.seed, "RNG seed");
  train->add_option("--out-dir", ta.out_dir, "Output directory")->required();
  train->add_option("--checkpoint-every", ta.checkpoint_every,
                    "Write a checkpoint every N steps (0: final only)");
  train->add_option("--resume", ta.resume, "Resume from a GGCK checkpoint");

  std::string tr_ckpt, tr_in, tr_out;
  auto* trans = app.add_subcommand("translate", "Translate a store with a trained encoder");
  trans->add_option("--ckpt", tr_ckpt, "GGCK checkpoint")->required();
  trans->add_option("--in", tr_in, "Input GGE file")->required();
  trans->add_option("--out", tr_out, "Output GGE file")->required();

  std::string fa, fb, fout;
  std::size_t fk = 6;
  auto* fuse = app.add_subcommand("fuse", "Top-K fusion of two equally shaped stores");
  fuse->add_option("--a", fa, "First GGE file")->required();
  fuse->add_option("--b", fb, "Second GGE file")->required();
  fuse->add_option("--k", fk, "Prefix length K (needs 1 <= K and 2K < L)");
  fuse->add_option("--out", fout, "Output GGE file")->required();

  std::string dg_ckpt, dg_src, dg_tgt, dg_out;
  auto* diag = app.add_subcommand(
      "diagnose", "Write projection CSV, dissimilarity CSV and loop-stability report");
  diag->add_option("--ckpt", dg_ckpt, "GGCK checkpoint")->required();
  diag->add_option("--src", dg_src, "Source GGE file")->required();
  diag->add_option("--tgt", dg_tgt, "Target GGE file")->required();
  diag->add_option("--out-dir", dg_out, "Output directory")->required();

  std::string pc_config;
  auto* pc = app.add_subcommand("param-count", "Print the encoder's parameter count");
  pc->add_option("--config", pc_config, "GlueNet config text file")->required();

  std::string in_file;
  auto* insp = app.add_subcommand("inspect", "Print GGE or GGCK header fields");
  insp->add_option("--file", in_file, "GGE or GGCK file")->required();

  // Required options are checked after parsing so that an unknown flag is
  // reported as such even when a required one is also missing.
  std::vector<std::pair<const CLI::App*, const CLI::Option*>> required;
  for (CLI::App* sub : app.get_subcommands({})) {
    for (CLI::Option* opt : sub->get_options()) {
      if (!opt->get_required()) continue;
      opt->required(false);
      opt->description(opt->get_description() + " (required)");
      required.emplace_back(sub, opt);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    std::cout << GLUENET_VERSION << '\n';
    return kOk;
  } catch (const CLI::RequiredError& e) {
    return report(kMissingFlag, "missing-flag", e.what());
  } catch (const CLI::ConversionError& e) {
    return report(kInvalidValue, "invalid-value", e.what());
  } catch (const CLI::ValidationError& e) {
    return report(kInvalidValue, "invalid-value", e.what());
  } catch (const CLI::ParseError& e) {
    return report(kUsage, "usage", e.what());
  }

  if (app.get_subcommands().empty()) {
    std::cerr << app.help();
    return report(kUsage, "usage", "a subcommand is required");
  }
  for (const auto& [sub, opt] : required) {
    if (sub->parsed() && opt->count() == 0)
      return report(kMissingFlag, "missing-flag", opt->get_name() + " is required");
  }

  try {
    if (*gen) return cmd_gen_synth(*gen, gs);
    if (*train) return cmd_train(*train, ta);
    if (*trans) return cmd_translate(*trans, tr_ckpt, tr_in, tr_out);
    if (*fuse) return cmd_fuse(*fuse, fa, fb, fk, fout);
    if (*diag) return cmd_diagnose(*diag, dg_ckpt, dg_src, dg_tgt, dg_out);
    if (*pc) return cmd_param_count(pc_config);
    if (*insp) return cmd_inspect(in_file);
  } catch (const Error& e) {
    return report(exit_code(e.kind()), std::string(to_string(e.kind())), e.what());
  } catch (const std::exception& e) {
    return report(kInternal, "internal", e.what());
  }
  return report(kUsage, "usage", "no subcommand given");
}
