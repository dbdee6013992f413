#include "sviqa/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "sviqa/error.hpp"
#include "sviqa/eval.hpp"
#include "sviqa/trainer.hpp"

namespace sviqa {

namespace {

std::filesystem::path manifest_path(const std::filesystem::path& data) {
  return std::filesystem::is_directory(data) ? data / "manifest.jsonl" : data;
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + p.string());
  os << s;
}

std::pair<ModelConfig, TrainConfig> load_configs(const std::string& path) {
  ModelConfig mc;
  TrainConfig tc;
  if (path.empty()) return {mc, tc};
  for (const auto& [k, v] : parse_key_values(read_text(path)))
    if (!mc.set(k, v) && !tc.set(k, v)) throw ConfigError(path + ": unknown key '" + k + "'");
  tc.validate();
  return {mc, tc};
}

SviqaModel model_from_checkpoint(const std::filesystem::path& path) {
  const auto ck = checkpoint_load(path);
  SviqaModel model(ModelConfig::from_canonical(ck.model_config));
  restore_model(model, ck);
  return model;
}

}  // namespace

int cli_main(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Speech/vision/text question answering toolkit"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic corpus");
  data::GeneratorConfig gcfg;
  std::string gen_out;
  gen->add_option("--n", gcfg.n, "number of records")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gcfg.seed, "generator seed");
  gen->add_option("--speech-prob", gcfg.speech_probability, "probability a question is spoken")
      ->check(CLI::Range(0.0, 1.0));
  gen->add_option("--out", gen_out, "output directory")->required();

  auto* train = app.add_subcommand("train", "Train the adapters and LoRA weights");
  std::string train_cfg, train_data, train_out, train_metrics, train_resume;
  train->add_option("--config", train_cfg, "flat key = value config file")->check(CLI::ExistingFile);
  train->add_option("--data", train_data, "corpus directory or manifest")->required();
  train->add_option("--out", train_out, "checkpoint path")->required();
  train->add_option("--metrics", train_metrics, "CSV metrics path (appended)");
  train->add_option("--resume", train_resume, "checkpoint to resume from")->check(CLI::ExistingFile);

  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a corpus");
  std::string ev_ckpt, ev_data, ev_mode = "as_is", ev_jsonl;
  bool ev_cascade = false, ev_ablation = false;
  double ev_corruption = 0.0;
  std::uint64_t ev_seed = 0;
  ev->add_option("--checkpoint", ev_ckpt)->required()->check(CLI::ExistingFile);
  ev->add_option("--data", ev_data)->required();
  ev->add_option("--mode", ev_mode, "as_is, force_text or force_speech");
  ev->add_option("--jsonl", ev_jsonl, "per-record results");
  ev->add_flag("--cascade", ev_cascade, "transcribe speech questions and answer them as text");
  ev->add_flag("--ablation", ev_ablation, "report all three input modes");
  ev->add_option("--asr-corruption", ev_corruption, "fraction of transcript characters corrupted")
      ->check(CLI::Range(0.0, 1.0));
  ev->add_option("--asr-seed", ev_seed);

  auto* inf = app.add_subcommand("infer", "Answer one question");
  std::string inf_ckpt, inf_image, inf_audio, inf_text;
  inf->add_option("--checkpoint", inf_ckpt)->required()->check(CLI::ExistingFile);
  inf->add_option("--image", inf_image)->required()->check(CLI::ExistingFile);
  auto* a_opt = inf->add_option("--audio", inf_audio)->check(CLI::ExistingFile);
  auto* t_opt = inf->add_option("--text", inf_text);
  a_opt->excludes(t_opt);
  t_opt->excludes(a_opt);

  auto* bench = app.add_subcommand("bench-latency", "Time end-to-end against cascade inference");
  std::string b_ckpt, b_data, b_csv;
  std::size_t b_runs = 30;
  bench->add_option("--checkpoint", b_ckpt)->required()->check(CLI::ExistingFile);
  bench->add_option("--data", b_data)->required();
  bench->add_option("--runs", b_runs)->check(CLI::Range(2, 1000000));
  bench->add_option("--csv", b_csv, "per-query samples");

  auto* stats = app.add_subcommand("stats", "Print corpus statistics");
  std::string s_data;
  stats->add_option("--data", s_data)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    if (*gen) {
      const auto ds = data::generate_synthetic_dataset(gcfg, gen_out);
      out << "wrote " << ds.records.size() << " records to " << ds.manifest.string() << "\n";
    } else if (*train) {
      auto [mc, tc] = load_configs(train_cfg);
      const auto man = data::load_and_validate_manifest(manifest_path(train_data));
      SviqaModel model(mc);
      const auto part = partition_parameters(model.parameters(), FreezePolicy::standard());
      Optimizer opt(part.trainable_tensors(), tc.optimizer);
      TrainState state;
      if (!train_resume.empty()) {
        const auto ck = checkpoint_load(train_resume);
        restore_model(model, ck);
        restore_optimizer(opt, ck);
        state.step = ck.step;
      }
      out << part.report.str() << "\n";
      const auto examples = model.prepare_all(training_records(man, tc), man.root);
      const auto hist = train_loop(model, opt, examples, tc, state, tc.steps, train_metrics);
      if (!hist.empty()) out << "final loss " << hist.back().loss << " at step " << hist.back().step << "\n";
      checkpoint_save(train_out, make_checkpoint(model, &opt, tc, state.step));
      out << "saved " << train_out << "\n";
    } else if (*ev) {
      const auto model = model_from_checkpoint(ev_ckpt);
      const auto man = data::load_and_validate_manifest(manifest_path(ev_data));
      eval::EvalOptions opts;
      if (ev_cascade) opts.cascade = eval::AsrStub{ev_corruption, ev_seed};
      if (ev_ablation) {
        const auto ab = eval::evaluate_modalities(model, man, opts);
        out << ab.table();
        if (!ev_jsonl.empty()) write_text(ev_jsonl, ab.mixed.jsonl() + ab.text.jsonl() + ab.speech.jsonl());
      } else {
        const auto rep = eval::evaluate(model, man, parse_input_mode(ev_mode), opts);
        out << rep.table();
        if (!ev_jsonl.empty()) write_text(ev_jsonl, rep.jsonl());
      }
    } else if (*inf) {
      const auto model = model_from_checkpoint(inf_ckpt);
      data::DatasetRecord rec;
      rec.id = "infer";
      rec.image = std::filesystem::absolute(inf_image).string();
      rec.answer = "?";
      if (!inf_audio.empty()) {
        rec.modality = data::Modality::speech;
        rec.audio = std::filesystem::absolute(inf_audio).string();
      } else if (!inf_text.empty()) {
        rec.text = inf_text;
      } else {
        err << "infer: one of --audio or --text is required\n" << inf->help();
        return 1;
      }
      out << model.answer(model.prepare(rec, "/")) << "\n";
    } else if (*bench) {
      const auto model = model_from_checkpoint(b_ckpt);
      const auto man = data::load_and_validate_manifest(manifest_path(b_data));
      const auto rep = eval::measure_latency(model, man, b_runs);
      out << rep.table();
      if (!b_csv.empty()) write_text(b_csv, rep.csv());
    } else if (*stats) {
      const auto man = data::load_and_validate_manifest(manifest_path(s_data));
      out << man.stats.table();
    }
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace sviqa
