// Command-line front end: synthetic scenes, preprocessing, training,
// inference, metrics, and the gradient verification suite.

#include <CLI11.hpp>

#include <iostream>

#include "duohdr/io.hpp"
#include "duohdr/verify.hpp"

namespace {

using duohdr::Tensor;

duohdr::LdrImage<double> ldr_from_png(const std::string& path, double t = 1.0) {
    duohdr::LdrImage<double> L;
    L.img = duohdr::u8_to_image<double>(duohdr::read_png(path));
    if (L.img.c != 3) throw duohdr::IoError("'" + path + "': expected an RGB PNG for LDR input");
    L.exposure_time = t;
    return L;
}

void write_preview_png(const std::string& path, const duohdr::Image<double>& hdr, double mu) {
    duohdr::write_png(path, duohdr::image_to_u8(duohdr::mu_law(hdr, mu)));
}

int cmd_esi(const std::string& in, const std::string& out, double clamp_c) {
    duohdr::LdrImage<double> L = ldr_from_png(in);
    duohdr::EsiImage<double> esi = duohdr::enhancement_stop(L, clamp_c);
    duohdr::ImageU8 png;
    png.w = esi.w;
    png.h = esi.h;
    png.c = 1;
    png.px.resize(esi.v.size());
    for (size_t i = 0; i < esi.v.size(); ++i)
        png.px[i] = static_cast<std::uint8_t>(std::lround(std::clamp(esi.v[i], 0.0, 1.0) * 255.0));
    duohdr::write_png(out, png);
    return 0;
}

int cmd_preprocess(const std::string& scene_dir, const std::string& out_dir, double gamma) {
    auto stack = duohdr::read_scene_dir(scene_dir);
    std::filesystem::create_directories(out_dir);
    const duohdr::LdrImage<double>* frames[3] = {&stack.under, &stack.reference, &stack.over};
    nlohmann::json meta;
    meta["gamma"] = gamma;
    meta["layout"] = "x{i}_ldr.pfm channels 0-2, x{i}_hdr.pfm channels 3-5 of the packed input";
    for (int i = 0; i < 3; ++i) {
        duohdr::write_pfm(out_dir + "/x" + std::to_string(i) + "_ldr.pfm", duohdr::image_to_pfm(frames[i]->img));
        duohdr::write_pfm(out_dir + "/x" + std::to_string(i) + "_hdr.pfm",
                          duohdr::image_to_pfm(duohdr::gamma_correct(*frames[i], gamma).img));
    }
    duohdr::EsiImage<double> esi = duohdr::enhancement_stop(stack.reference);
    duohdr::PfmImage ep;
    ep.w = esi.w;
    ep.h = esi.h;
    ep.c = 1;
    ep.px.assign(esi.v.begin(), esi.v.end());
    duohdr::write_pfm(out_dir + "/esi.pfm", ep);
    std::ofstream mf(out_dir + "/meta.json");
    mf << meta.dump(2) << '\n';
    return 0;
}

int cmd_synth(const std::string& out_dir, std::uint64_t seed, int size, int motion, double ev_step) {
    duohdr::SynthOptions opt;
    opt.height = size;
    opt.width = size;
    opt.motion_px = motion;
    opt.ev_step = ev_step;
    duohdr::write_scene_dir(out_dir, duohdr::synth_scene<double>(seed, opt));
    return 0;
}

int cmd_train(const std::string& config_path, std::string out_dir, duohdr::Ablation ablation_switch) {
    duohdr::RunConfig cfg =
        config_path.empty() ? duohdr::RunConfig{} : duohdr::load_run_config(config_path);
    if (ablation_switch != duohdr::Ablation::None)
        cfg.network = duohdr::ablate(cfg.network, ablation_switch);
    if (out_dir.empty()) out_dir = cfg.out_dir;
    if (out_dir.empty()) throw duohdr::ConfigError("no output directory (use -o or paths.out_dir)");

    duohdr::ParamStore<double> store(cfg.seed);
    duohdr::TrainReport report = duohdr::train_toy(cfg, store);
    std::filesystem::create_directories(out_dir);
    duohdr::save_checkpoint(store, out_dir + "/model.ckpt", &cfg.network);
    duohdr::write_report(out_dir, report, cfg);
    std::cout << "steps " << report.steps.size() << "  initial " << report.initial_total << "  final "
              << report.final_total << "  ratio "
              << (report.initial_total > 0 ? report.final_total / report.initial_total : 0.0) << "\n";
    return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& scene_dir, const std::string& out_dir, double mu) {
    duohdr::ParamStore<double> store(0);
    duohdr::NetworkConfig net;
    duohdr::load_checkpoint(store, ckpt, &net);
    auto stack = duohdr::read_scene_dir(scene_dir);
    auto packed = duohdr::pack_stack(stack);

    duohdr::Graph<double> g(&store, duohdr::BnMode::Eval);
    g.tape.set_recording(false);
    auto fwd = duohdr::mhdr_forward(g, packed, net);

    std::filesystem::create_directories(out_dir);
    const duohdr::Image<double> hm = duohdr::to_interleaved(fwd.hm.value());
    duohdr::write_pfm(out_dir + "/hm.pfm", duohdr::image_to_pfm(hm));
    write_preview_png(out_dir + "/hm_preview.png", hm, mu);
    if (fwd.has_hs) {
        const duohdr::Image<double> hs = duohdr::to_interleaved(fwd.hs.value());
        duohdr::write_pfm(out_dir + "/hs.pfm", duohdr::image_to_pfm(hs));
        write_preview_png(out_dir + "/hs_preview.png", hs, mu);
    }
    return 0;
}

int cmd_eval(const std::string& a_path, const std::string& b_path, double mu) {
    const duohdr::Image<double> a = duohdr::pfm_to_image<double>(duohdr::read_pfm(a_path));
    const duohdr::Image<double> b = duohdr::pfm_to_image<double>(duohdr::read_pfm(b_path));
    const Tensor<double> ta = duohdr::to_planar(a);
    const Tensor<double> tb = duohdr::to_planar(b);
    duohdr::MetricSet m = duohdr::evaluate_metrics(ta, tb, mu);
    nlohmann::json j;
    j["psnr_l"] = m.psnr_l;  // null when infinite (identical images)
    j["psnr_mu"] = m.psnr_mu;
    j["ssim_l"] = m.ssim_l;
    j["ssim_mu"] = m.ssim_mu;
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_gradcheck(int seeds, double tol, bool quick, int threads) {
    duohdr::VerifyOptions opt;
    opt.seeds = seeds;
    opt.tol = tol;
    opt.threads = threads;
    if (quick) {
        opt.seeds = std::min(seeds, 2);
        opt.include_ablations = false;
    }
    const auto results = duohdr::run_gradcheck_suite(opt);
    double worst = 0.0;
    bool all_pass = true;
    for (const auto& r : results) {
        std::printf("%-22s max_rel_err %.3e  [%s]  (%.1fs)\n", r.name.c_str(), r.max_rel_err,
                    r.pass ? "pass" : "FAIL", r.seconds);
        worst = std::max(worst, r.max_rel_err);
        all_pass = all_pass && r.pass;
    }
    std::printf("worst %.3e (tolerance %.1e)\n", worst, tol);
    if (!all_pass) throw duohdr::VerifyError("gradient verification failed");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dual-branch ghost-suppressing HDR reconstruction toolkit"};
    app.require_subcommand(1);

    // esi
    std::string esi_in, esi_out;
    double esi_clamp = duohdr::kDefaultEsiClamp;
    auto* esi = app.add_subcommand("esi", "enhancement-stop image of an LDR PNG");
    esi->add_option("input", esi_in, "input LDR PNG")->required();
    esi->add_option("output", esi_out, "output grayscale PNG")->required();
    esi->add_option("--clamp", esi_clamp, "clamp constant c");

    // preprocess
    std::string pre_scene, pre_out;
    double pre_gamma = duohdr::kDefaultGamma;
    auto* pre = app.add_subcommand("preprocess", "dump packed 6-channel network inputs for a scene");
    pre->add_option("scene", pre_scene, "scene directory")->required();
    pre->add_option("out", pre_out, "output directory")->required();
    pre->add_option("--gamma", pre_gamma, "gamma correction exponent");

    // synth
    std::string synth_out;
    std::uint64_t synth_seed = 0;
    int synth_size = 32, synth_motion = 3;
    double synth_ev = 2.0;
    auto* synth = app.add_subcommand("synth", "generate a synthetic ghosting scene");
    synth->add_option("-o,--out", synth_out, "output directory")->required();
    synth->add_option("--seed", synth_seed, "random seed");
    synth->add_option("--size", synth_size, "square image size");
    synth->add_option("--motion", synth_motion, "foreground motion in pixels");
    synth->add_option("--ev-step", synth_ev, "exposure step in EV");

    // train
    std::string train_cfg, train_out;
    auto* train = app.add_subcommand("train", "run the micro-training loop");
    train->add_option("--config", train_cfg, "run configuration JSON");
    train->add_option("-o,--out", train_out, "output directory");

    // infer
    std::string inf_ckpt, inf_scene, inf_out;
    double inf_mu = duohdr::kDefaultMu;
    auto* infer = app.add_subcommand("infer", "reconstruct HDR outputs for a scene");
    infer->add_option("--checkpoint", inf_ckpt, "model checkpoint")->required();
    infer->add_option("--scene", inf_scene, "scene directory")->required();
    infer->add_option("-o,--out", inf_out, "output directory")->required();
    infer->add_option("--mu", inf_mu, "preview tone-mapping compression");

    // eval
    std::string eval_a, eval_b;
    double eval_mu = duohdr::kDefaultMu;
    auto* ev = app.add_subcommand("eval", "PSNR/SSIM between two HDR PFMs");
    ev->add_option("a", eval_a, "first PFM")->required();
    ev->add_option("b", eval_b, "second (reference) PFM")->required();
    ev->add_option("--mu", eval_mu, "tone-mapping compression for the -mu metrics");

    // gradcheck
    int gc_seeds = 10, gc_threads = 0;
    double gc_tol = 1e-4;
    bool gc_quick = false;
    auto* gc = app.add_subcommand("gradcheck", "run the gradient verification suite");
    gc->add_option("--seeds", gc_seeds, "seeds per check");
    gc->add_option("--tol", gc_tol, "max relative error tolerance");
    gc->add_option("--threads", gc_threads, "worker threads (0 = auto)");
    gc->add_flag("--quick", gc_quick, "reduced suite for smoke testing");

    // ablate
    std::string abl_cfg, abl_out, abl_switch;
    auto* abl = app.add_subcommand("ablate", "train with one module ablated");
    abl->add_option("--switch", abl_switch, "no_srm|no_mrm|no_fifm|no_gsm|no_shdr_esi")->required();
    abl->add_option("--config", abl_cfg, "run configuration JSON");
    abl->add_option("-o,--out", abl_out, "output directory");

    try {
        app.parse(argc, argv);
        if (esi->parsed()) return cmd_esi(esi_in, esi_out, esi_clamp);
        if (pre->parsed()) return cmd_preprocess(pre_scene, pre_out, pre_gamma);
        if (synth->parsed()) return cmd_synth(synth_out, synth_seed, synth_size, synth_motion, synth_ev);
        if (train->parsed()) return cmd_train(train_cfg, train_out, duohdr::Ablation::None);
        if (infer->parsed()) return cmd_infer(inf_ckpt, inf_scene, inf_out, inf_mu);
        if (ev->parsed()) return cmd_eval(eval_a, eval_b, eval_mu);
        if (gc->parsed()) return cmd_gradcheck(gc_seeds, gc_tol, gc_quick, gc_threads);
        if (abl->parsed()) return cmd_train(abl_cfg, abl_out, duohdr::ablation_from_name(abl_switch));
        return 1;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const duohdr::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const duohdr::VerifyError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const duohdr::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
