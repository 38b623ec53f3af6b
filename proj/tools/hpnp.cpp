#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hpnp/hpnp.hpp"

namespace fs = std::filesystem;

namespace {

fs::path default_preset_dir()
{
    if (const char* env = std::getenv("HPNP_PRESET_DIR"))
        return env;
    return HPNP_PRESET_DIR;
}

std::vector<double> parse_ratios(const std::string& text)
{
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = hpnp::trim(item);
        if (item.empty())
            continue;
        try {
            out.push_back(std::stod(item));
        } catch (...) {
            throw hpnp::Error(hpnp::Errc::invalid_argument, "bad ratio '" + item + "'");
        }
    }
    return out;
}

hpnp::Settings parse_overrides(const std::vector<std::string>& items)
{
    hpnp::Settings out;
    for (const auto& item : items) {
        const auto eq = item.find('=');
        if (eq == std::string::npos)
            throw hpnp::Error(hpnp::Errc::invalid_argument, "--set expects key=value, got '" + item + "'");
        out[hpnp::trim(item.substr(0, eq))] = hpnp::trim(item.substr(eq + 1));
    }
    return out;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Hybrid low-rank / plug-and-play compressive sensing reconstruction"};
    app.require_subcommand(1);

    // run
    auto* run = app.add_subcommand("run", "simulate block CS measurements, reconstruct and score");
    std::vector<std::string> images;
    std::string ratios_text = "0.1,0.2,0.3,0.4,0.5";
    std::string preset = "auto";
    std::uint64_t seed = 7;
    std::string out_dir = "hpnp_out";
    std::string denoiser_text;
    bool history = false;
    std::vector<std::string> sets;
    std::string preset_dir = default_preset_dir().string();
    std::size_t block_size = 32;
    run->add_option("--images", images, "image files or directories (PGM/PNG)")->required();
    run->add_option("--ratios", ratios_text, "comma-separated sampling ratios");
    run->add_option("--preset", preset, "preset names joined by '+'; 'auto' selects r<ratio>");
    run->add_option("--seed", seed, "sensing matrix seed");
    run->add_option("--out", out_dir, "output directory");
    run->add_option("--denoiser", denoiser_text, "native | external:\"CMD\"");
    run->add_flag("--history", history, "write per-iteration JSON-lines history");
    run->add_option("--set", sets, "override a solver setting, key=value");
    run->add_option("--preset-dir", preset_dir, "directory holding <preset>.toml files");
    run->add_option("--block-size", block_size, "sensing block side");

    // encode
    auto* encode = app.add_subcommand("encode", "write block CS measurements of one image");
    std::string enc_image, enc_out;
    double enc_ratio = 0.3;
    encode->add_option("--image", enc_image)->required();
    encode->add_option("--ratio", enc_ratio);
    encode->add_option("--seed", seed);
    encode->add_option("--block-size", block_size);
    encode->add_option("--out", enc_out, "measurement file")->required();

    // decode
    auto* decode = app.add_subcommand("decode", "reconstruct an image from a measurement file");
    std::string dec_in, dec_out, dec_history;
    std::optional<std::uint64_t> dec_seed;
    std::string dec_preset = "auto";
    decode->add_option("--in", dec_in, "measurement file")->required();
    decode->add_option("--out", dec_out, "reconstructed image (.pgm/.png)")->required();
    decode->add_option("--seed", dec_seed, "expected seed; must match the file header");
    decode->add_option("--preset", dec_preset);
    decode->add_option("--preset-dir", preset_dir);
    decode->add_option("--denoiser", denoiser_text);
    decode->add_option("--set", sets);
    decode->add_option("--history", dec_history, "JSON-lines history output path");

    // psnr
    auto* psnr_cmd = app.add_subcommand("psnr", "PSNR in dB between two images");
    std::string psnr_a, psnr_b;
    psnr_cmd->add_option("reference", psnr_a)->required();
    psnr_cmd->add_option("test", psnr_b)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            hpnp::ExperimentSpec spec;
            for (const auto& p : images)
                spec.images.emplace_back(p);
            spec.ratios = parse_ratios(ratios_text);
            spec.seed = seed;
            spec.preset = preset;
            spec.overrides = parse_overrides(sets);
            if (!denoiser_text.empty())
                spec.denoiser = hpnp::parse_denoiser_kind(denoiser_text);
            spec.preset_dir = preset_dir;
            spec.out_dir = out_dir;
            spec.block_size = block_size;
            spec.history = history;
            const auto summary = hpnp::run_experiment(spec);
            if (summary.rows.empty()) {
                std::cerr << "error: no runs produced a result\n";
                return 2;
            }
            std::cout << hpnp::csv_header << '\n';
            for (const auto& r : summary.rows)
                std::cout << hpnp::csv_row(r) << '\n';
            std::cout << hpnp::csv_row(*summary.average, true) << '\n';
            return summary.skipped.empty() ? 0 : 3;
        }
        if (*encode) {
            const auto cropped = hpnp::center_crop_to_block(hpnp::load_image(enc_image), block_size);
            const auto sensor = hpnp::make_sensor(block_size, enc_ratio, seed);
            hpnp::save_measurements(hpnp::measure(sensor, cropped.image), enc_out);
            std::cerr << "encoded " << cropped.image.height() << "x" << cropped.image.width() << " crop at ("
                      << cropped.top << ", " << cropped.left << "), " << sensor.rows << " rows per block\n";
            return 0;
        }
        if (*decode) {
            const auto meas = hpnp::load_measurements(dec_in);
            if (dec_seed && *dec_seed != meas.seed)
                throw hpnp::Error(hpnp::Errc::invalid_argument, "seed mismatch: --seed " + std::to_string(*dec_seed)
                        + " but measurement file was encoded with seed " + std::to_string(meas.seed));
            const auto sensor = hpnp::sensor_for(meas);
            auto cfg = hpnp::resolve_config(dec_preset, hpnp::nominal_ratio(meas), preset_dir, parse_overrides(sets));
            if (!denoiser_text.empty())
                cfg.denoiser = hpnp::parse_denoiser_kind(denoiser_text);
            const auto rec = hpnp::reconstruct(sensor, meas, cfg);
            for (const auto& w : rec.state.warnings)
                std::cerr << "warning: " << w << '\n';
            hpnp::save_image(rec.image, dec_out);
            if (!dec_history.empty())
                hpnp::write_history(rec.state.history, dec_history);
            std::cerr << "decoded in " << rec.state.k << " iterations\n";
            return 0;
        }
        if (*psnr_cmd) {
            std::cout << hpnp::format_number(hpnp::psnr(hpnp::load_image(psnr_a), hpnp::load_image(psnr_b)), 4) << '\n';
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
