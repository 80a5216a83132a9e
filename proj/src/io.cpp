#include "duohdr/io.hpp"

#include <png.h>

#include <cstring>

namespace duohdr {

namespace {

struct FileCloser {
    FILE* f = nullptr;
    ~FileCloser() {
        if (f) std::fclose(f);
    }
};

}  // namespace

// ---------------------------------------------------------------------------
// PNG (8-bit gray or RGB)
// ---------------------------------------------------------------------------

ImageU8 read_png(const std::string& path) {
    FileCloser fc{std::fopen(path.c_str(), "rb")};
    if (!fc.f) throw IoError("cannot open PNG '" + path + "'");

    png_byte header[8];
    if (std::fread(header, 1, 8, fc.f) != 8 || png_sig_cmp(header, 0, 8))
        throw IoError("'" + path + "' is not a PNG file (bad signature)");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng failed reading '" + path + "'");
    }
    png_init_io(png, fc.f);
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);
    if (bit_depth != 8) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("'" + path + "': unsupported bit depth " + std::to_string(bit_depth) + " (only 8-bit PNG)");
    }
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    ImageU8 out;
    out.w = static_cast<int>(png_get_image_width(png, info));
    out.h = static_cast<int>(png_get_image_height(png, info));
    out.c = static_cast<int>(png_get_channels(png, info));
    if (out.c != 1 && out.c != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("'" + path + "': unsupported channel count " + std::to_string(out.c) + " (gray or RGB only)");
    }
    out.px.resize(static_cast<size_t>(out.w) * out.h * out.c);
    std::vector<png_bytep> rows(static_cast<size_t>(out.h));
    for (int y = 0; y < out.h; ++y) rows[static_cast<size_t>(y)] = out.px.data() + static_cast<size_t>(y) * out.w * out.c;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

void write_png(const std::string& path, const ImageU8& img) {
    if (img.c != 1 && img.c != 3) throw IoError("write_png: channel count must be 1 or 3, got " + std::to_string(img.c));
    FileCloser fc{std::fopen(path.c_str(), "wb")};
    if (!fc.f) throw IoError("cannot open '" + path + "' for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng failed writing '" + path + "'");
    }
    png_init_io(png, fc.f);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
                 img.c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<size_t>(img.h));
    for (int y = 0; y < img.h; ++y)
        rows[static_cast<size_t>(y)] =
            const_cast<png_bytep>(img.px.data() + static_cast<size_t>(y) * img.w * img.c);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// ---------------------------------------------------------------------------
// PFM
// ---------------------------------------------------------------------------

namespace {

std::string read_pfm_token(FILE* f, const std::string& path) {
    std::string tok;
    int ch;
    do {
        ch = std::fgetc(f);
        if (ch == EOF) throw IoError("'" + path + "': truncated PFM header");
    } while (std::isspace(ch));
    while (ch != EOF && !std::isspace(ch)) {
        tok.push_back(static_cast<char>(ch));
        ch = std::fgetc(f);
    }
    return tok;
}

}  // namespace

PfmImage read_pfm(const std::string& path) {
    FileCloser fc{std::fopen(path.c_str(), "rb")};
    if (!fc.f) throw IoError("cannot open PFM '" + path + "'");

    const std::string magic = read_pfm_token(fc.f, path);
    PfmImage out;
    if (magic == "PF")
        out.c = 3;
    else if (magic == "Pf")
        out.c = 1;
    else
        throw IoError("'" + path + "': malformed PFM header (expected PF or Pf, got '" + magic + "')");

    try {
        out.w = std::stoi(read_pfm_token(fc.f, path));
        out.h = std::stoi(read_pfm_token(fc.f, path));
    } catch (const std::exception&) {
        throw IoError("'" + path + "': malformed PFM dimensions");
    }
    if (out.w <= 0 || out.h <= 0) throw IoError("'" + path + "': nonpositive PFM dimensions");
    double scale = 0.0;
    try {
        scale = std::stod(read_pfm_token(fc.f, path));
    } catch (const std::exception&) {
        throw IoError("'" + path + "': malformed PFM scale");
    }
    if (scale >= 0.0) throw IoError("'" + path + "': big-endian PFM (scale " + std::to_string(scale) + ") unsupported");

    out.px.resize(static_cast<size_t>(out.w) * out.h * out.c);
    // rows are stored bottom-to-top
    for (int y = out.h - 1; y >= 0; --y) {
        float* row = out.px.data() + static_cast<size_t>(y) * out.w * out.c;
        if (std::fread(row, sizeof(float), static_cast<size_t>(out.w) * out.c, fc.f) !=
            static_cast<size_t>(out.w) * out.c)
            throw IoError("'" + path + "': truncated PFM payload");
    }
    return out;
}

void write_pfm(const std::string& path, const PfmImage& img) {
    if (img.c != 1 && img.c != 3) throw IoError("write_pfm: channel count must be 1 or 3, got " + std::to_string(img.c));
    FileCloser fc{std::fopen(path.c_str(), "wb")};
    if (!fc.f) throw IoError("cannot open '" + path + "' for writing");
    std::fprintf(fc.f, "%s\n%d %d\n-1.0\n", img.c == 3 ? "PF" : "Pf", img.w, img.h);
    for (int y = img.h - 1; y >= 0; --y) {
        const float* row = img.px.data() + static_cast<size_t>(y) * img.w * img.c;
        if (std::fwrite(row, sizeof(float), static_cast<size_t>(img.w) * img.c, fc.f) !=
            static_cast<size_t>(img.w) * img.c)
            throw IoError("failed writing PFM '" + path + "'");
    }
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const char* scope) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known)
            if (it.key() == k) ok = true;
        if (!ok) throw ConfigError(std::string("unknown config key '") + it.key() + "' in " + scope);
    }
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& j) {
    RunConfig cfg;
    reject_unknown(j, {"network", "loss", "imaging", "optim", "train", "seed", "ablation", "paths"}, "config root");
    if (j.contains("network")) {
        const auto& n = j.at("network");
        reject_unknown(n, {"channels", "dem_count", "window"}, "network");
        cfg.network.channels = n.value("channels", cfg.network.channels);
        cfg.network.dem_count = n.value("dem_count", cfg.network.dem_count);
        cfg.network.window = n.value("window", cfg.network.window);
    }
    if (j.contains("loss")) {
        const auto& l = j.at("loss");
        reject_unknown(l, {"lambda", "alpha", "beta", "mu"}, "loss");
        cfg.loss.lambda = l.value("lambda", cfg.loss.lambda);
        cfg.loss.alpha = l.value("alpha", cfg.loss.alpha);
        cfg.loss.beta = l.value("beta", cfg.loss.beta);
        cfg.loss.mu = l.value("mu", cfg.loss.mu);
    }
    if (j.contains("imaging")) {
        const auto& m = j.at("imaging");
        reject_unknown(m, {"gamma", "esi_clamp"}, "imaging");
        cfg.gamma = m.value("gamma", cfg.gamma);
        cfg.esi_clamp = m.value("esi_clamp", cfg.esi_clamp);
    }
    if (j.contains("optim")) {
        const auto& o = j.at("optim");
        reject_unknown(o, {"lr", "beta1", "beta2", "eps", "weight_decay", "lr_decay", "lr_decay_epochs"}, "optim");
        cfg.optim.lr = o.value("lr", cfg.optim.lr);
        cfg.optim.beta1 = o.value("beta1", cfg.optim.beta1);
        cfg.optim.beta2 = o.value("beta2", cfg.optim.beta2);
        cfg.optim.eps = o.value("eps", cfg.optim.eps);
        cfg.optim.weight_decay = o.value("weight_decay", cfg.optim.weight_decay);
        cfg.optim.lr_decay = o.value("lr_decay", cfg.optim.lr_decay);
        cfg.optim.lr_decay_epochs = o.value("lr_decay_epochs", cfg.optim.lr_decay_epochs);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        reject_unknown(t, {"steps", "batch", "scene_size", "motion_px", "ev_step", "pool", "metrics_every"}, "train");
        cfg.train.steps = t.value("steps", cfg.train.steps);
        cfg.train.batch = t.value("batch", cfg.train.batch);
        cfg.train.scene_size = t.value("scene_size", cfg.train.scene_size);
        cfg.train.motion_px = t.value("motion_px", cfg.train.motion_px);
        cfg.train.ev_step = t.value("ev_step", cfg.train.ev_step);
        cfg.train.pool = t.value("pool", cfg.train.pool);
        cfg.train.metrics_every = t.value("metrics_every", cfg.train.metrics_every);
    }
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("ablation")) cfg.network.ablation = ablation_from_name(j.at("ablation").get<std::string>());
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        reject_unknown(p, {"out_dir"}, "paths");
        cfg.out_dir = p.value("out_dir", cfg.out_dir);
    }
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config '" + path + "'");
    nlohmann::json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
    return parse_run_config(j);
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["network"] = {{"channels", cfg.network.channels}, {"dem_count", cfg.network.dem_count}, {"window", cfg.network.window}};
    j["loss"] = {{"lambda", cfg.loss.lambda}, {"alpha", cfg.loss.alpha}, {"beta", cfg.loss.beta}, {"mu", cfg.loss.mu}};
    j["imaging"] = {{"gamma", cfg.gamma}, {"esi_clamp", cfg.esi_clamp}};
    j["optim"] = {{"lr", cfg.optim.lr},       {"beta1", cfg.optim.beta1},
                  {"beta2", cfg.optim.beta2}, {"eps", cfg.optim.eps},
                  {"weight_decay", cfg.optim.weight_decay}, {"lr_decay", cfg.optim.lr_decay},
                  {"lr_decay_epochs", cfg.optim.lr_decay_epochs}};
    j["train"] = {{"steps", cfg.train.steps},         {"batch", cfg.train.batch},
                  {"scene_size", cfg.train.scene_size}, {"motion_px", cfg.train.motion_px},
                  {"ev_step", cfg.train.ev_step},     {"pool", cfg.train.pool},
                  {"metrics_every", cfg.train.metrics_every}};
    j["seed"] = cfg.seed;
    j["ablation"] = ablation_name(cfg.network.ablation);
    return j;
}

std::string config_hash(const RunConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(run_config_to_json(cfg).dump())));
    return buf;
}

// ---------------------------------------------------------------------------
// Scene directories
// ---------------------------------------------------------------------------

void write_scene_dir(const std::string& dir, const SynthScene<double>& scene) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const LdrImage<double>* frames[3] = {&scene.stack.under, &scene.stack.reference, &scene.stack.over};
    nlohmann::json exposures = nlohmann::json::array();
    for (int i = 0; i < 3; ++i) {
        write_png(dir + "/ldr_" + std::to_string(i) + ".png", image_to_u8(frames[i]->img));
        exposures.push_back({{"ev", frames[i]->ev}, {"t", frames[i]->exposure_time}});
    }
    std::ofstream ej(dir + "/exposure.json");
    if (!ej) throw IoError("cannot write '" + dir + "/exposure.json'");
    ej << exposures.dump(2) << '\n';

    write_pfm(dir + "/gt.pfm", image_to_pfm(scene.ground_truth.img));

    ImageU8 mask;
    mask.w = scene.stack.reference.img.w;
    mask.h = scene.stack.reference.img.h;
    mask.c = 1;
    mask.px.resize(scene.motion_mask.size());
    for (size_t i = 0; i < scene.motion_mask.size(); ++i) mask.px[i] = scene.motion_mask[i] ? 255 : 0;
    write_png(dir + "/mask.png", mask);
}

ExposureStack<double> read_scene_dir(const std::string& dir) {
    std::ifstream ej(dir + "/exposure.json");
    if (!ej) throw IoError("cannot open '" + dir + "/exposure.json'");
    nlohmann::json exposures;
    try {
        ej >> exposures;
    } catch (const std::exception& e) {
        throw IoError("'" + dir + "/exposure.json': " + e.what());
    }
    if (!exposures.is_array() || exposures.size() != 3)
        throw IoError("'" + dir + "/exposure.json': expected an array of 3 exposures");

    ExposureStack<double> stack;
    LdrImage<double>* frames[3] = {&stack.under, &stack.reference, &stack.over};
    for (int i = 0; i < 3; ++i) {
        frames[i]->img = u8_to_image<double>(read_png(dir + "/ldr_" + std::to_string(i) + ".png"));
        frames[i]->ev = exposures[static_cast<size_t>(i)].value("ev", 0.0);
        if (!exposures[static_cast<size_t>(i)].contains("t"))
            throw IoError("'" + dir + "/exposure.json': frame " + std::to_string(i) + " missing exposure time 't'");
        frames[i]->exposure_time = exposures[static_cast<size_t>(i)].at("t").get<double>();
    }
    stack.validate();
    return stack;
}

bool read_scene_gt(const std::string& dir, Image<double>& gt) {
    const std::string path = dir + "/gt.pfm";
    if (!std::filesystem::exists(path)) return false;
    gt = pfm_to_image<double>(read_pfm(path));
    return true;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

void write_report(const std::string& dir, const TrainReport& report, const RunConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    std::ofstream lines(dir + "/report.jsonl");
    if (!lines) throw IoError("cannot write '" + dir + "/report.jsonl'");
    for (const auto& s : report.steps) {
        nlohmann::json j;
        j["step"] = s.step;
        j["total"] = s.loss.total;
        j["lm"] = s.loss.lm;
        j["ls"] = s.loss.ls;
        j["lm_re"] = s.loss.lm_re;
        j["lm_ssim"] = s.loss.lm_ssim;
        j["lm_grad"] = s.loss.lm_grad;
        j["ls_re"] = s.loss.ls_re;
        j["ls_ssim"] = s.loss.ls_ssim;
        j["ls_grad"] = s.loss.ls_grad;
        j["lr"] = s.lr;
        if (!s.applied) j["note"] = s.note;
        lines << j.dump() << '\n';
    }

    nlohmann::json summary;
    summary["seed"] = report.seed;
    summary["config_hash"] = config_hash(cfg);
    summary["steps"] = static_cast<int>(report.steps.size());
    summary["initial_total"] = report.initial_total;
    summary["final_total"] = report.final_total;
    summary["loss_ratio"] = report.initial_total > 0 ? report.final_total / report.initial_total : 0.0;
    nlohmann::json traj = nlohmann::json::array();
    for (const auto& m : report.metrics) {
        nlohmann::json jm;
        jm["step"] = m.step;
        jm["psnr_l"] = m.metrics.psnr_l;    // serialized as null when infinite
        jm["psnr_mu"] = m.metrics.psnr_mu;  // (identical images)
        jm["ssim_l"] = m.metrics.ssim_l;
        jm["ssim_mu"] = m.metrics.ssim_mu;
        traj.push_back(jm);
    }
    summary["metrics"] = traj;
    summary["wall_clock_sec"] = report.wall_clock_sec;
    std::ofstream sf(dir + "/summary.json");
    if (!sf) throw IoError("cannot write '" + dir + "/summary.json'");
    sf << summary.dump(2) << '\n';
}

}  // namespace duohdr
