// Command-line front end: gendata / train / eval / ablate / attn.
// Exit codes: 0 success, 1 usage error, 2 data or schema error,
// 3 numerical abort.

#include <cstdio>
#include <exception>

#include <CLI11.hpp>

#include "utc/checkpoint.hpp"
#include "utc/commands.hpp"
#include "utc/config.hpp"
#include "utc/corpus.hpp"
#include "utc/model.hpp"
#include "utc/tensor.hpp"
#include "utc/trainer.hpp"

int main(int argc, char** argv) {
  CLI::App app{"unified visual-dialog transformer"};
  app.require_subcommand(0, 1);
  bool paper_profile = false;
  app.add_flag("--paper-profile", paper_profile,
               "print the paper-scale configuration and exit");

  utc::GendataArgs gd;
  CLI::App* gendata = app.add_subcommand("gendata", "generate a synthetic corpus");
  gendata->add_option("--seed", gd.seed);
  gendata->add_option("--images", gd.images);
  gendata->add_option("--rounds", gd.rounds);
  gendata->add_option("--candidates", gd.candidates);
  gendata->add_option("--regions", gd.regions);
  gendata->add_option("--d-img", gd.d_img);
  gendata->add_option("--feature-noise", gd.feature_noise);
  gendata->add_option("--out", gd.out)->required();

  utc::TrainArgs tr;
  CLI::App* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", tr.config)->required();
  train->add_option("--data", tr.data)->required();
  train->add_option("--out", tr.out)->required();
  train->add_option("--mode", tr.mode)
      ->check(CLI::IsMember({"individual", "elementary", "no_cc", "no_ac", "full"}));
  train->add_option("--dense-annotations", tr.dense_annotations);
  train->add_option("--resume", tr.resume);
  train->add_option("--init", tr.init);
  train->add_option("--log", tr.log);

  utc::EvalArgs ev;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--ckpt", ev.ckpt)->required();
  eval->add_option("--data", ev.data)->required();
  eval->add_option("--split", ev.split);
  eval->add_option("--setting", ev.setting)->check(CLI::IsMember({"disc", "gen"}));
  eval->add_option("--out", ev.out)->required();
  eval->add_option("--predictions", ev.predictions);

  utc::AblateArgs ab;
  CLI::App* ablate = app.add_subcommand("ablate", "train and score every ablation mode");
  ablate->add_option("--config", ab.config)->required();
  ablate->add_option("--data", ab.data)->required();
  ablate->add_option("--seeds", ab.seeds);
  ablate->add_option("--out", ab.out)->required();

  utc::AttnArgs at;
  CLI::App* attn = app.add_subcommand("attn", "export final-layer attention maps");
  attn->add_option("--ckpt", at.ckpt)->required();
  attn->add_option("--data", at.data)->required();
  attn->add_option("--image", at.image_id);
  attn->add_option("--round", at.round);
  attn->add_option("--out", at.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (paper_profile) {
      std::printf("%s\n", utc::paper_profile_json().dump(2).c_str());
      return 0;
    }
    if (gendata->parsed())
      utc::cmd_gendata(gd);
    else if (train->parsed())
      utc::cmd_train(tr);
    else if (eval->parsed())
      utc::cmd_eval(ev);
    else if (ablate->parsed())
      utc::cmd_ablate(ab);
    else if (attn->parsed())
      utc::cmd_attn(at);
    else {
      std::fprintf(stderr, "%s", app.help().c_str());
      return 1;
    }
  } catch (const utc::TrainerError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const utc::TensorError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
