#include "apdraw/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>

#include <CLI11.hpp>

#include "apdraw/backbones.hpp"
#include "apdraw/checkpoint.hpp"
#include "apdraw/config.hpp"
#include "apdraw/corpus.hpp"
#include "apdraw/dissect.hpp"
#include "apdraw/face_parser.hpp"
#include "apdraw/fid.hpp"
#include "apdraw/image_io.hpp"
#include "apdraw/networks.hpp"
#include "apdraw/ranking.hpp"
#include "apdraw/serve.hpp"
#include "apdraw/styles.hpp"
#include "apdraw/trainer.hpp"

namespace fs = std::filesystem;

namespace apdraw::cli {
namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  bool dry_run = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "INI config file")->check(CLI::ExistingFile);
  sub->add_option("--set", c.overrides, "override a config key: section.key=value")->take_all();
  sub->add_flag("--dry-run", c.dry_run, "validate inputs and config, then exit without side effects");
}

// Flag values mirror config keys; --set wins over both.
Config build_config(const Common& c, const std::vector<std::pair<std::string, std::string>>& flags) {
  Config cfg;
  if (!c.config_path.empty()) cfg = Config::from_file(c.config_path);
  for (const auto& [key, value] : flags)
    if (!value.empty()) cfg.set(key, value);
  for (const auto& o : c.overrides) cfg.set(o);
  return cfg;
}

std::string require(const Config& cfg, const std::string& key, const std::string& flag) {
  auto v = cfg.find(key);
  if (!v || v->empty()) throw ConfigError("missing " + flag + " (config key " + key + ")");
  return *v;
}

std::unique_ptr<FaceParser> make_parser(const Config& cfg) {
  if (auto dir = cfg.find("corpus.mask_dir"); dir && !dir->empty()) return std::make_unique<MaskDirectoryParser>(*dir);
  return std::make_unique<TemplateFaceParser>();
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ValidationError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (e.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".jpeg")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw ValidationError("no images in " + dir.string());
  return out;
}

torch::Tensor load_dir(const fs::path& dir, int size, Kind kind) {
  std::vector<torch::Tensor> xs;
  for (const auto& p : list_images(dir)) xs.push_back(preprocess(read_image(p), size, kind));
  return torch::stack(xs);
}

torch::Tensor load_image(const fs::path& path, int size, Kind kind) {
  if (!fs::exists(path)) throw ValidationError("no such image: " + path.string());
  return preprocess(read_image(path), size, kind);
}

nlohmann::json head_config(const ImageHead& h, int image_size) {
  return {{"width", h->options().width}, {"stages", h->options().stages}, {"image_size", image_size}};
}

struct LoadedHead {
  ImageHead head{nullptr};
  int image_size = 0;
};

LoadedHead load_head(const fs::path& path, const std::string& kind) {
  auto h = read_checkpoint_header(path);
  const auto width = h.config.at("width").get<int64_t>();
  const auto stages = h.config.at("stages").get<int64_t>();
  auto head = kind == "C" ? make_style_classifier(width, stages) : make_quality_regressor(width, stages);
  load_checkpoint(path, *head, kind, h.config);
  head->eval();
  return {head, h.config.at("image_size").get<int>()};
}

ResnetGenerator load_generator(const fs::path& path) {
  auto h = read_checkpoint_header(path);
  auto G = make_drawing_generator(GeneratorConfig::from_json(h.config.at("net")));
  load_checkpoint(path, *G, "G", h.config);
  G->eval();
  return G;
}

void write_history(const fs::path& path, const HeadTrainHistory& h) {
  std::ofstream out(path);
  out.precision(10);
  out << "step,loss\n";
  for (size_t i = 0; i < h.losses.size(); ++i) out << i + 1 << ',' << h.losses[i] << '\n';
}

HeadTrainOptions head_options(const TrainConfig& tc) {
  HeadTrainOptions o;
  o.steps = tc.head_steps;
  o.batch = tc.head_batch;
  o.lr = tc.head_lr;
  o.seed = tc.seed;
  return o;
}

std::string style_text(const StyleVector& s) { return style_header(s); }

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, out, err);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Portrait line-drawing pipeline", "apdraw"};
  app.require_subcommand(1);
  Common common;

  // train-classifier
  std::string manifest, out_dir;
  auto* train_c = app.add_subcommand("train-classifier", "train the style classifier C on tagged drawings");
  add_common(train_c, common);
  train_c->add_option("--manifest", manifest, "corpus manifest");
  train_c->add_option("--out", out_dir, "output directory")->required();

  // train-metric
  std::string dataset;
  auto* train_m = app.add_subcommand("train-metric", "train the quality regressor M on a metric dataset");
  add_common(train_m, common);
  train_m->add_option("--dataset", dataset, "path<TAB>score file")->required();
  train_m->add_option("--out", out_dir, "output directory")->required();

  // train-gan
  std::string profile, epochs, classifier_ckpt, metric_ckpt;
  auto* train_g = app.add_subcommand("train-gan", "train G, F and both critics");
  add_common(train_g, common);
  train_g->add_option("--manifest", manifest, "corpus manifest");
  train_g->add_option("--profile", profile, "full or toy");
  train_g->add_option("--epochs", epochs, "number of epochs");
  train_g->add_option("--classifier", classifier_ckpt, "C checkpoint, needed for untagged drawings");
  train_g->add_option("--metric", metric_ckpt, "M checkpoint for the quality term");
  train_g->add_option("--out", out_dir, "output directory")->required();

  // infer
  std::string checkpoint, photo, style, styles, out_path;
  auto* infer = app.add_subcommand("infer", "generate drawings for a photo");
  add_common(infer, common);
  infer->add_option("--checkpoint", checkpoint, "G checkpoint");
  infer->add_option("--photo", photo, "input photo")->required()->check(CLI::ExistingFile);
  auto* style_opt = infer->add_option("--style", style, "style code a,b,c");
  infer->add_option("--styles", styles, "'all' renders the three basis styles")->excludes(style_opt);
  infer->add_option("--out", out_path, "output PNG (a directory with --styles all)");

  // rank
  std::string answers;
  auto* rank = app.add_subcommand("rank", "aggregate and normalize preference answers");
  add_common(rank, common);
  rank->add_option("--answers", answers, "answer log (JSONL)")->required();
  rank->add_option("--manifest", manifest, "restrict scores to the drawings of this manifest");
  rank->add_option("--out", out_path, "scores CSV")->required();

  // metric-dataset
  auto* metric_ds = app.add_subcommand("metric-dataset", "join normalized scores with image paths");
  add_common(metric_ds, common);
  metric_ds->add_option("--answers", answers, "answer log (JSONL)")->required();
  metric_ds->add_option("--manifest", manifest, "corpus manifest");
  metric_ds->add_option("--out", out_path, "path<TAB>score output")->required();

  // style-search
  std::string target;
  int steps = 200;
  double lr = 0.05;
  uint64_t seed = 0;
  bool project = false;
  auto* search = app.add_subcommand("style-search", "search a style code matching a target drawing");
  add_common(search, common);
  search->add_option("--checkpoint", checkpoint, "G checkpoint");
  search->add_option("--photo", photo, "input photo")->required()->check(CLI::ExistingFile);
  search->add_option("--target", target, "target drawing")->required()->check(CLI::ExistingFile);
  search->add_option("--steps", steps, "optimizer steps")->check(CLI::PositiveNumber);
  search->add_option("--lr", lr, "Adam learning rate")->check(CLI::PositiveNumber);
  search->add_option("--seed", seed, "seed of the random start");
  search->add_flag("--project", project, "project the code onto the simplex after each step");
  search->add_option("--out", out_path, "trace CSV")->required();

  // dissect
  std::string photos_dir;
  auto* dissect = app.add_subcommand("dissect", "label G's conv units with facial regions");
  add_common(dissect, common);
  dissect->add_option("--checkpoint", checkpoint, "G checkpoint");
  dissect->add_option("--photos", photos_dir, "directory of photos")->required();
  dissect->add_option("--style", style, "style code a,b,c (default 1,0,0)");
  dissect->add_option("--out", out_path, "unit CSV")->required();

  // eval-fid
  std::string generated_dir, reference_dir;
  int size = 0;
  auto* fid = app.add_subcommand("eval-fid", "FID between two drawing directories");
  add_common(fid, common);
  fid->add_option("--generated", generated_dir, "generated drawings")->required();
  fid->add_option("--reference", reference_dir, "reference drawings")->required();
  fid->add_option("--size", size, "side the images are resized to (default train.image_size)");

  // eval-quality
  std::string drawings_dir;
  auto* quality = app.add_subcommand("eval-quality", "mean predicted quality of a drawing directory");
  add_common(quality, common);
  quality->add_option("--metric", metric_ckpt, "M checkpoint")->required();
  quality->add_option("--drawings", drawings_dir, "drawings directory")->required();
  quality->add_option("--out", out_path, "per-image CSV");

  // serve
  std::string host = "127.0.0.1", port;
  auto* serve = app.add_subcommand("serve", "HTTP API for the study and the style explorer");
  add_common(serve, common);
  serve->add_option("--host", host, "bind address");
  serve->add_option("--port", port, "port (serve.port)");
  serve->add_option("--checkpoint", checkpoint, "G checkpoint (serve.model_checkpoint)");
  serve->add_option("--manifest", manifest, "study manifest (serve.study_manifest)");
  serve->add_option("--answers", answers, "answer log (serve.answer_log)");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 1;
  }

  try {
    if (*train_c) {
      auto cfg = build_config(common, {{"corpus.manifest", manifest}});
      auto tc = TrainConfig::from_config(cfg);
      tc.validate();
      const auto records = load_manifest(require(cfg, "corpus.manifest", "--manifest"));
      std::vector<ImageRecord> tagged;
      std::vector<int> labels;
      for (const auto& r : select(records, Kind::drawing))
        if (r.style_tag)
          if (auto k = style_index(*r.style_tag)) {
            tagged.push_back(r);
            labels.push_back(*k);
          }
      if (tagged.empty()) throw ValidationError("manifest has no style-tagged drawings");
      if (common.dry_run) {
        out << "ok: " << tagged.size() << " tagged drawings\n";
        return 0;
      }
      const auto x = load_batch(tagged, tc.net.image_size);
      auto C = make_style_classifier();
      init_weights(*C, mix_seed(tc.seed, 21));
      auto hist = train_classifier(C, x, labels, head_options(tc));
      fs::create_directories(out_dir);
      save_checkpoint(fs::path(out_dir) / "C.ckpt", *C, "C", head_config(C, tc.net.image_size));
      write_history(fs::path(out_dir) / "classifier_loss.csv", hist);
      out << "accuracy " << classifier_accuracy(C, x, labels) << "\n";
    } else if (*train_m) {
      auto cfg = build_config(common, {});
      auto tc = TrainConfig::from_config(cfg);
      tc.validate();
      const auto rows = read_metric_dataset(dataset);
      if (rows.empty()) throw ValidationError("metric dataset is empty");
      if (common.dry_run) {
        out << "ok: " << rows.size() << " scored drawings\n";
        return 0;
      }
      std::vector<torch::Tensor> xs;
      std::vector<double> scores;
      for (const auto& r : rows) {
        xs.push_back(load_image(r.path, tc.net.image_size, Kind::drawing));
        scores.push_back(r.score);
      }
      const auto x = torch::stack(xs);
      auto M = make_quality_regressor();
      init_weights(*M, mix_seed(tc.seed, 22));
      auto hist = train_metric(M, x, scores, head_options(tc));
      fs::create_directories(out_dir);
      save_checkpoint(fs::path(out_dir) / "M.ckpt", *M, "M", head_config(M, tc.net.image_size));
      write_history(fs::path(out_dir) / "metric_loss.csv", hist);
      out << "mse " << metric_mse(M, x, scores) << "\n";
    } else if (*train_g) {
      auto cfg = build_config(common, {{"corpus.manifest", manifest}, {"train.profile", profile}, {"train.epochs", epochs}});
      auto tc = TrainConfig::from_config(cfg);
      tc.validate();
      const auto manifest_path = require(cfg, "corpus.manifest", "--manifest");
      auto backbones = make_backbones(BackboneConfig::from_config(cfg));
      if (common.dry_run) {
        const auto counts = count_records(load_manifest(manifest_path));
        out << "ok: " << counts.photos << " photos, " << counts.drawings << " drawings, profile "
            << to_string(tc.profile) << ", " << tc.epochs << " epochs\n";
        return 0;
      }
      const auto records = load_manifest(manifest_path);
      ImageHead C{nullptr}, M{nullptr};
      if (!classifier_ckpt.empty()) C = load_head(classifier_ckpt, "C").head;
      if (!metric_ckpt.empty()) M = load_head(metric_ckpt, "M").head;
      auto parser = make_parser(cfg);
      auto data = prepare_gan_data(records, tc, *parser, C.is_empty() ? nullptr : &C);
      auto models = GanModels::create(tc);
      GanTrainer trainer(tc, models, std::move(data), backbones, M);
      auto reports = trainer.train(fs::path(out_dir));
      trainer.models().save(out_dir, tc);
      for (const auto& r : reports) out << r.to_json().dump() << "\n";
    } else if (*infer) {
      auto cfg = build_config(common, {{"model.checkpoint", checkpoint}});
      std::vector<StyleVector> codes;
      if (!styles.empty()) {
        if (styles != "all") throw ValidationError("--styles only accepts 'all'");
        for (int k = 0; k < 3; ++k) codes.push_back(StyleVector::basis(k));
      } else {
        codes.push_back(parse_style_vector(style.empty() ? "1,0,0" : style));
      }
      const fs::path ckpt = require(cfg, "model.checkpoint", "--checkpoint");
      if (common.dry_run) {
        read_checkpoint_header(ckpt);
        out << "ok\n";
        return 0;
      }
      auto G = load_generator(ckpt);
      const auto p = load_image(photo, static_cast<int>(G->options().image_size), Kind::photo);
      const auto stem = fs::path(photo).stem().string();
      torch::NoGradGuard no_grad;
      for (size_t i = 0; i < codes.size(); ++i) {
        fs::path dst;
        if (codes.size() == 1) {
          dst = out_path.empty() ? fs::path(stem + "_drawing.png") : fs::path(out_path);
        } else {
          const fs::path dir = out_path.empty() ? fs::path(".") : fs::path(out_path);
          fs::create_directories(dir);
          dst = dir / (stem + "_style" + std::to_string(i + 1) + ".png");
        }
        if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
        write_png(generate_drawing(p, codes[i], G), dst);
        out << dst.string() << "\t" << style_text(codes[i]) << "\n";
      }
    } else if (*rank) {
      auto cfg = build_config(common, {{"corpus.manifest", manifest}});
      const auto log = read_answer_log(answers);
      ScoreTable base;
      if (auto m = cfg.find("corpus.manifest"); m && !m->empty()) {
        std::map<StyleTag, std::vector<std::string>> pools;
        for (const auto& r : select(load_manifest(*m), Kind::drawing))
          if (r.style_tag && style_index(*r.style_tag)) pools[*r.style_tag].push_back(r.id);
        base = ScoreTable(pools);
      }
      auto table = normalize_scores(aggregate_scores(log, base));
      if (common.dry_run) {
        out << "ok: " << log.size() << " answers\n";
        return 0;
      }
      write_scores_csv(out_path, table);
      out << log.size() << " answers, " << table.entries().size() << " drawings\n";
    } else if (*metric_ds) {
      auto cfg = build_config(common, {{"corpus.manifest", manifest}});
      const auto records = load_manifest(require(cfg, "corpus.manifest", "--manifest"));
      const auto log = read_answer_log(answers);
      auto table = normalize_scores(aggregate_scores(log));
      auto rows = build_metric_dataset(table, records);
      if (common.dry_run) {
        out << "ok: " << rows.size() << " rows\n";
        return 0;
      }
      write_metric_dataset(out_path, rows);
      out << rows.size() << " rows\n";
    } else if (*search) {
      auto cfg = build_config(common, {{"model.checkpoint", checkpoint}});
      const fs::path ckpt = require(cfg, "model.checkpoint", "--checkpoint");
      auto backbones = make_backbones(BackboneConfig::from_config(cfg));
      if (common.dry_run) {
        read_checkpoint_header(ckpt);
        out << "ok\n";
        return 0;
      }
      auto G = load_generator(ckpt);
      const int s = static_cast<int>(G->options().image_size);
      StyleSearchOptions opts;
      opts.steps = steps;
      opts.lr = lr;
      opts.seed = seed;
      opts.project_simplex = project || cfg.get_bool("styles.project_simplex", false);
      const auto p = load_image(photo, s, Kind::photo).unsqueeze(0);
      const auto d = load_image(target, s, Kind::drawing).unsqueeze(0);
      StyleSearchState state;
      try {
        state = search_new_style(G, p, d, *backbones.features, opts);
      } catch (const StyleSearchAborted& e) {
        write_trace_csv(out_path, e.state);
        throw;
      }
      write_trace_csv(out_path, state);
      out << "style " << style_text(state.s) << " loss " << state.loss << " step " << state.step << "\n";
    } else if (*dissect) {
      auto cfg = build_config(common, {{"model.checkpoint", checkpoint}});
      const fs::path ckpt = require(cfg, "model.checkpoint", "--checkpoint");
      const auto code = parse_style_vector(style.empty() ? "1,0,0" : style);
      const auto files = list_images(photos_dir);
      if (common.dry_run) {
        read_checkpoint_header(ckpt);
        out << "ok: " << files.size() << " photos\n";
        return 0;
      }
      auto G = load_generator(ckpt);
      const auto photos = load_dir(photos_dir, static_cast<int>(G->options().image_size), Kind::photo);
      auto parser = make_parser(cfg);
      auto report = label_units(G, photos, *parser, code);
      write_unit_csv(out_path, report);
      out << report.units.size() << " units, " << report.interpretable() << " interpretable, " << report.photos_skipped
          << " photos skipped\n";
    } else if (*fid) {
      auto cfg = build_config(common, {});
      auto tc = TrainConfig::from_config(cfg);
      const int side = size > 0 ? size : tc.net.image_size;
      auto backbones = make_backbones(BackboneConfig::from_config(cfg));
      list_images(generated_dir);
      list_images(reference_dir);
      if (common.dry_run) {
        out << "ok\n";
        return 0;
      }
      const auto a = load_dir(generated_dir, side, Kind::drawing);
      const auto b = load_dir(reference_dir, side, Kind::drawing);
      out << "fid " << evaluate_fid(a, b, *backbones.fid) << "\n";
    } else if (*quality) {
      build_config(common, {});
      const auto files = list_images(drawings_dir);
      auto [M, side] = load_head(metric_ckpt, "M");
      if (common.dry_run) {
        out << "ok: " << files.size() << " drawings\n";
        return 0;
      }
      const auto x = load_dir(drawings_dir, side, Kind::drawing);
      torch::NoGradGuard no_grad;
      const auto q = predict_quality(x, M);
      if (!out_path.empty()) {
        std::ofstream csv(out_path);
        csv.precision(10);
        csv << "path,score\n";
        for (size_t i = 0; i < files.size(); ++i) csv << files[i].string() << ',' << q[i].item<double>() << '\n';
      }
      out << "quality " << q.mean().item<double>() << "\n";
    } else if (*serve) {
      auto cfg = build_config(common, {{"serve.port", port},
                                       {"serve.model_checkpoint", checkpoint},
                                       {"serve.study_manifest", manifest},
                                       {"serve.answer_log", answers}});
      const auto port_number = cfg.get_int("serve.port", 8080);
      if (port_number < 0 || port_number > 65535) throw ValidationError("serve.port out of range");
      const auto records = load_manifest(require(cfg, "serve.study_manifest", "--manifest"));
      const auto ckpt = cfg.get_string("serve.model_checkpoint", "");
      if (common.dry_run) {
        if (!ckpt.empty()) read_checkpoint_header(ckpt);
        out << "ok: " << records.size() << " records\n";
        return 0;
      }
      StudyService study(records, cfg.get_string("serve.answer_log", "answers.jsonl"), static_cast<uint64_t>(cfg.get_int("train.seed", 1)));
      GenerationService generation;
      if (!ckpt.empty()) generation.load(load_generator(ckpt));
      for (const auto& r : select(records, Kind::photo)) generation.add_photo(r.id, r.path);
      out << "listening on " << host << ":" << port_number << std::endl;
      run_server(study, generation, host, static_cast<int>(port_number));
    }
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const DecodeError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace apdraw::cli
