#pragma once

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "clora/checkpoint.hpp"
#include "clora/config.hpp"
#include "clora/metrics.hpp"
#include "clora/model.hpp"
#include "clora/png.hpp"
#include "clora/sampler.hpp"
#include "clora/synthetic.hpp"
#include "clora/train.hpp"

namespace clora {

// Exit codes: 0 success, 1 usage error, 2 runtime failure.

namespace clidetail {

inline DenoiserModel model_for(const ExperimentConfig& cfg, const std::string& base_ckpt) {
    if (base_ckpt.empty()) return DenoiserModel::init(cfg.model_config(), cfg.model.seed);
    DenoiserModel m = load_model(base_ckpt);
    if (!(m.cfg == cfg.model_config()))
        throw std::runtime_error("base checkpoint " + base_ckpt + " does not match the [model] section");
    return m;
}

inline int run_training(const std::string& kind, const std::string& config_path,
                        const std::string& image_path, const std::string& out_path,
                        const std::string& base_ckpt, const std::string& report_path) {
    ExperimentConfig cfg = load_config(config_path);
    NoiseSchedule sched  = make_linear_schedule(cfg.schedule.timesteps, cfg.schedule.beta_start,
                                                cfg.schedule.beta_end);
    DenoiserModel model  = model_for(cfg, base_ckpt);
    Tensor image         = png_read(image_path);
    if (image.shape()[0] != model.cfg.height || image.shape()[1] != model.cfg.width)
        throw std::runtime_error("image " + image_path + " is " + shape_str(image.shape()) +
                                 " but the model expects " + std::to_string(model.cfg.height) + "x" +
                                 std::to_string(model.cfg.width));
    TrainConfig tc = TrainConfig::from(cfg);

    TrainResult result = kind == "content" ? train_content_lora(model, image, sched, tc)
                       : kind == "style"   ? train_style_lora_two_step(model, image, sched, tc)
                                           : train_joint_baseline(model, image, sched, tc);
    save_lora_set(out_path, result.set, model.cfg, sched.T);
    if (!report_path.empty()) write_report_csv(report_path, result.report);
    std::printf("trained %s lora: %d steps, final loss %.6g -> %s\n", kind.c_str(),
                static_cast<int>(result.report.steps.size()),
                result.report.steps.empty() ? 0.0 : result.report.steps.back().loss, out_path.c_str());
    return 0;
}

}  // namespace clidetail

inline int cli_dispatch(const std::vector<std::string>& args) {
    CLI::App app{"desk-scale diffusion + LoRA style-transfer laboratory"};
    app.require_subcommand(1);

    // train-content / train-style / train-joint
    struct TrainArgs {
        std::string config, image, out, base, report;
    } tr_content, tr_style, tr_joint;
    auto add_train = [&](const char* name, const char* desc, TrainArgs& a) {
        CLI::App* sc = app.add_subcommand(name, desc);
        sc->add_option("config", a.config, "experiment config file")->required();
        sc->add_option("image", a.image, "training image (8-bit RGB PNG)")->required();
        sc->add_option("-o,--out", a.out, "output LoRA checkpoint")->required();
        sc->add_option("--base", a.base, "pretrained base model checkpoint");
        sc->add_option("--report", a.report, "write per-step training report CSV");
        return sc;
    };
    CLI::App* sc_content = add_train("train-content", "train a content LoRA (loss transition)", tr_content);
    CLI::App* sc_style   = add_train("train-style", "two-step content+style LoRA training", tr_style);
    CLI::App* sc_joint   = add_train("train-joint", "joint content+style baseline (ablation)", tr_joint);

    // train-base
    std::string tb_config, tb_out, tb_report;
    CLI::App* sc_base = app.add_subcommand("train-base", "pretrain the base denoiser on synthetic data");
    sc_base->add_option("config", tb_config)->required();
    sc_base->add_option("-o,--out", tb_out)->required();
    sc_base->add_option("--report", tb_report);

    // transfer
    std::string tf_config, tf_content, tf_style, tf_base, tf_out;
    double tf_cfg = -1.0, tf_cont = -1.0, tf_sty = -1.0;
    CLI::App* sc_transfer = app.add_subcommand("transfer", "stylize: sample with both LoRA sets");
    sc_transfer->add_option("config", tf_config)->required();
    sc_transfer->add_option("--content-lora", tf_content, "LoRA set trained on the content image")->required();
    sc_transfer->add_option("--style-lora", tf_style, "LoRA set trained on the style image")->required();
    sc_transfer->add_option("--base", tf_base, "pretrained base model checkpoint");
    sc_transfer->add_option("--lambda-cfg", tf_cfg, "classifier-free guidance strength")
        ->check(CLI::NonNegativeNumber);
    sc_transfer->add_option("--lambda-cont", tf_cont, "content guidance strength")
        ->check(CLI::NonNegativeNumber);
    sc_transfer->add_option("--lambda-sty", tf_sty, "style guidance strength")
        ->check(CLI::NonNegativeNumber);
    sc_transfer->add_option("-o,--out", tf_out, "output PNG")->required();

    // analyze-loss
    std::string al_config, al_ckpt, al_out;
    int al_evals = 200;
    CLI::App* sc_analyze = app.add_subcommand("analyze-loss", "per-timestep loss profile of a model");
    sc_analyze->add_option("config", al_config)->required();
    sc_analyze->add_option("ckpt", al_ckpt, "model checkpoint")->required();
    sc_analyze->add_option("-o,--out", al_out, "output CSV")->required();
    sc_analyze->add_option("--evals-per-bucket", al_evals);

    // metrics
    std::string mt_a, mt_b;
    CLI::App* sc_metrics = app.add_subcommand("metrics", "proxy style/content metrics for two PNGs");
    sc_metrics->add_option("a", mt_a)->required();
    sc_metrics->add_option("b", mt_b)->required();

    // gen-data
    uint64_t gd_seed = 0;
    std::string gd_out;
    CLI::App* sc_gendata = app.add_subcommand("gen-data", "write a synthetic content/style image pair");
    sc_gendata->add_option("seed", gd_seed)->required();
    sc_gendata->add_option("-o,--out", gd_out, "output directory")->required();

    std::vector<std::string> rev(args.rbegin(), args.rend());
    if (!rev.empty()) rev.pop_back();  // drop argv[0]; CLI11 parses reversed tail
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e);
        return 0;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (sc_content->parsed())
            return clidetail::run_training("content", tr_content.config, tr_content.image,
                                           tr_content.out, tr_content.base, tr_content.report);
        if (sc_style->parsed())
            return clidetail::run_training("style", tr_style.config, tr_style.image, tr_style.out,
                                           tr_style.base, tr_style.report);
        if (sc_joint->parsed())
            return clidetail::run_training("joint", tr_joint.config, tr_joint.image, tr_joint.out,
                                           tr_joint.base, tr_joint.report);

        if (sc_base->parsed()) {
            ExperimentConfig cfg = load_config(tb_config);
            NoiseSchedule sched  = make_linear_schedule(cfg.schedule.timesteps, cfg.schedule.beta_start,
                                                        cfg.schedule.beta_end);
            DenoiserModel model  = DenoiserModel::init(cfg.model_config(), cfg.model.seed);
            auto dataset = synthetic_dataset(cfg.train.dataset_seed, cfg.train.dataset_size,
                                             cfg.model.height, cfg.model.width);
            TrainReport report = train_base(model, dataset, sched, cfg.train.base_steps,
                                            cfg.train.base_lr, cfg.train.seed,
                                            cfg.train.adam_beta1, cfg.train.adam_beta2);
            save_model(tb_out, model, sched.T);
            if (!tb_report.empty()) write_report_csv(tb_report, report);
            std::printf("trained base model: %d steps on %d images -> %s\n", cfg.train.base_steps,
                        cfg.train.dataset_size, tb_out.c_str());
            return 0;
        }

        if (sc_transfer->parsed()) {
            ExperimentConfig cfg = load_config(tf_config);
            NoiseSchedule sched  = make_linear_schedule(cfg.schedule.timesteps, cfg.schedule.beta_start,
                                                        cfg.schedule.beta_end);
            DenoiserModel model  = clidetail::model_for(cfg, tf_base);
            LoraSet content_set  = load_lora_set(tf_content, model.cfg);
            LoraSet style_set    = load_lora_set(tf_style, model.cfg);
            GuidanceParams gp    = bind_transfer(model, content_set, style_set);
            gp.lambda_cfg        = tf_cfg >= 0.0 ? tf_cfg : cfg.guidance.lambda_cfg;
            gp.lambda_cont       = tf_cont >= 0.0 ? tf_cont : cfg.guidance.lambda_cont;
            gp.lambda_sty        = tf_sty >= 0.0 ? tf_sty : cfg.guidance.lambda_sty;
            gp.content_strength  = cfg.guidance.content_strength;
            gp.style_strength    = cfg.guidance.style_strength;
            Tensor out = sample(model, gp, sched, cfg.guidance.sample_steps, cfg.guidance.sample_seed);
            png_write(tf_out, out);
            std::printf("transfer: lambda_cfg=%g lambda_cont=%g lambda_sty=%g -> %s\n", gp.lambda_cfg,
                        gp.lambda_cont, gp.lambda_sty, tf_out.c_str());
            return 0;
        }

        if (sc_analyze->parsed()) {
            ExperimentConfig cfg = load_config(al_config);
            NoiseSchedule sched  = make_linear_schedule(cfg.schedule.timesteps, cfg.schedule.beta_start,
                                                        cfg.schedule.beta_end);
            DenoiserModel model  = load_model(al_ckpt);
            auto dataset = synthetic_dataset(cfg.train.dataset_seed, cfg.train.dataset_size,
                                             cfg.model.height, cfg.model.width);
            LossProfile profile = timestep_loss_profile(model, dataset, sched, al_evals, cfg.train.seed);
            write_profile_csv(al_out, profile);
            std::printf("loss profile over %d buckets -> %s\n",
                        static_cast<int>(profile.buckets.size()), al_out.c_str());
            return 0;
        }

        if (sc_metrics->parsed()) {
            Tensor a = png_read(mt_a);
            Tensor b = png_read(mt_b);
            std::printf("gram_style_distance,content_mse\n%.17g,%.17g\n", gram_style_distance(a, b),
                        content_mse(a, b));
            return 0;
        }

        if (sc_gendata->parsed()) {
            std::filesystem::create_directories(gd_out);
            auto [content, style] = generate_synthetic_pair(gd_seed);
            png_write(gd_out + "/content.png", content);
            png_write(gd_out + "/style.png", style);
            std::printf("gen-data seed %llu -> %s/content.png, %s/style.png\n",
                        static_cast<unsigned long long>(gd_seed), gd_out.c_str(), gd_out.c_str());
            return 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}

inline int cli_dispatch(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return cli_dispatch(args);
}

}  // namespace clora
