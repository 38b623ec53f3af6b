#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpnp/config.hpp"
#include "hpnp/error.hpp"
#include "hpnp/image.hpp"
#include "hpnp/sensing.hpp"
#include "hpnp/solver.hpp"

namespace hpnp {

struct CenterCrop {
    Image image;
    std::size_t top = 0;
    std::size_t left = 0;
};

/// Largest centered crop whose sides are multiples of block_size.
inline CenterCrop center_crop_to_block(const Image& img, std::size_t block_size)
{
    const std::size_t h = img.height() / block_size * block_size;
    const std::size_t w = img.width() / block_size * block_size;
    if (h == 0 || w == 0)
        throw Error(Errc::dimension_mismatch, "image " + std::to_string(img.height()) + "x"
                + std::to_string(img.width()) + " is smaller than one " + std::to_string(block_size) + "-pixel block");
    const std::size_t top = (img.height() - h) / 2;
    const std::size_t left = (img.width() - w) / 2;
    if (h == img.height() && w == img.width())
        return {img, 0, 0};
    return {crop(img, top, left, h, w), top, left};
}

struct ExperimentSpec {
    std::vector<std::filesystem::path> images;  // files or directories
    std::vector<double> ratios;
    std::uint64_t seed = 7;
    std::string preset = "auto";
    Settings overrides;
    std::optional<DenoiserKind> denoiser;
    std::filesystem::path preset_dir;
    std::filesystem::path out_dir;
    std::size_t block_size = 32;
    bool history = false;
    bool save_images = true;
};

struct RunRow {
    std::string image;
    double ratio = 0.0;
    std::uint64_t seed = 0;
    std::string preset;
    double psnr_init = 0.0;
    double psnr_final = 0.0;
    double iterations = 0.0;
    double wall_seconds = 0.0;
    std::size_t crop_top = 0;
    std::size_t crop_left = 0;
};

struct ExperimentSummary {
    std::vector<RunRow> rows;
    std::vector<std::string> skipped;
    std::optional<RunRow> average;
};

inline constexpr const char* csv_header = "image,ratio,seed,preset,psnr_init,psnr_final,iterations,wall_seconds,crop_top,crop_left";

inline std::string format_number(double v, int decimals)
{
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    if (std::isnan(v))
        return "nan";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

inline std::string format_ratio(double ratio)
{
    std::ostringstream os;
    os << ratio;
    return os.str();
}

inline std::string csv_row(const RunRow& r, bool average = false)
{
    std::ostringstream os;
    os << r.image << ',' << (average && r.ratio == 0.0 ? std::string("all") : format_ratio(r.ratio)) << ',' << r.seed
       << ',' << r.preset << ',' << format_number(r.psnr_init, 4) << ',' << format_number(r.psnr_final, 4) << ','
       << (average ? format_number(r.iterations, 2) : format_number(r.iterations, 0)) << ','
       << format_number(r.wall_seconds, 3) << ',';
    if (!average)
        os << r.crop_top << ',' << r.crop_left;
    else
        os << ',';
    return os.str();
}

inline nlohmann::json history_json(const IterationRecord& rec)
{
    auto num = [](double v) -> nlohmann::json { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    return {
        {"iteration", rec.iteration},
        {"relative_change", num(rec.relative_change)},
        {"psnr", num(rec.psnr)},
        {"fidelity", num(rec.fidelity)},
        {"lowrank_coupling", num(rec.lowrank_coupling)},
        {"noise_floor", rec.noise_floor},
        {"timings", {{"group", rec.group_seconds}, {"lowrank", rec.lowrank_seconds}, {"admm", rec.admm_seconds}}},
    };
}

inline void write_history(const std::vector<IterationRecord>& history, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out)
        throw Error(Errc::io, "cannot write " + path.string());
    for (const auto& rec : history)
        out << history_json(rec).dump() << '\n';
}

/// Expands directories into their .pgm/.png files, sorted by name.
inline std::vector<std::filesystem::path> collect_images(const std::vector<std::filesystem::path>& inputs)
{
    std::vector<std::filesystem::path> out;
    for (const auto& p : inputs) {
        if (std::filesystem::is_directory(p)) {
            std::vector<std::filesystem::path> found;
            for (const auto& entry : std::filesystem::directory_iterator(p)) {
                const std::string ext = detail::lower_extension(entry.path());
                if (entry.is_regular_file() && (ext == ".pgm" || ext == ".png"))
                    found.push_back(entry.path());
            }
            std::sort(found.begin(), found.end());
            out.insert(out.end(), found.begin(), found.end());
        } else {
            out.push_back(p);
        }
    }
    return out;
}

inline SolverConfig experiment_config(const ExperimentSpec& spec, double ratio)
{
    SolverConfig cfg = resolve_config(spec.preset, ratio, spec.preset_dir, spec.overrides);
    if (spec.denoiser)
        cfg.denoiser = *spec.denoiser;
    return cfg;
}

/// One (image, ratio) run: crop, measure, reconstruct, score.
inline RunRow run_single(const Image& original, const std::string& name, double ratio, const ExperimentSpec& spec,
    Reconstruction* keep = nullptr)
{
    const auto t0 = std::chrono::steady_clock::now();
    const CenterCrop cropped = center_crop_to_block(original, spec.block_size);
    const BlockSensor sensor = make_sensor(spec.block_size, ratio, spec.seed);
    const Measurements meas = measure(sensor, cropped.image);
    const SolverConfig cfg = experiment_config(spec, ratio);
    Reconstruction rec = reconstruct(sensor, meas, cfg, cropped.image);

    RunRow row;
    row.image = name;
    row.ratio = ratio;
    row.seed = spec.seed;
    row.preset = spec.preset;
    row.psnr_init = psnr(cropped.image, rec.initial);
    row.psnr_final = psnr(cropped.image, rec.image);
    row.iterations = static_cast<double>(rec.state.k);
    row.crop_top = cropped.top;
    row.crop_left = cropped.left;
    for (const auto& w : rec.state.warnings)
        std::cerr << "warning: " << name << " @ " << format_ratio(ratio) << ": " << w << '\n';

    if (!spec.out_dir.empty()) {
        const std::string stem = std::filesystem::path(name).stem().string() + "_r" + format_ratio(ratio);
        if (spec.save_images)
            save_image(rec.image, spec.out_dir / (stem + ".pgm"));
        if (spec.history)
            write_history(rec.state.history, spec.out_dir / (stem + ".history.jsonl"));
    }
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (keep)
        *keep = std::move(rec);
    return row;
}

inline void write_summary_csv(const ExperimentSummary& summary, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out)
        throw Error(Errc::io, "cannot write " + path.string());
    out << csv_header << '\n';
    for (const auto& r : summary.rows)
        out << csv_row(r) << '\n';
    if (summary.average)
        out << csv_row(*summary.average, true) << '\n';
}

/// Runs every (image, ratio) pair. Unreadable images are skipped with a
/// warning on `log`; the summary CSV goes to out_dir/summary.csv.
inline ExperimentSummary run_experiment(const ExperimentSpec& spec, std::ostream& log = std::cerr)
{
    if (spec.ratios.empty())
        throw Error(Errc::invalid_argument, "no sampling ratios given");
    for (double r : spec.ratios)
        if (!(r > 0.0 && r <= 1.0))
            throw Error(Errc::invalid_argument, "sampling ratio " + format_ratio(r) + " outside (0, 1]");
    if (!spec.out_dir.empty())
        std::filesystem::create_directories(spec.out_dir);

    ExperimentSummary summary;
    for (const auto& path : collect_images(spec.images)) {
        Image img;
        try {
            img = load_image(path);
        } catch (const Error& e) {
            log << "warning: skipping " << path.string() << ": " << e.what() << '\n';
            summary.skipped.push_back(path.string());
            continue;
        }
        for (double ratio : spec.ratios) {
            RunRow row = run_single(img, path.filename().string(), ratio, spec);
            log << row.image << " ratio " << format_ratio(ratio) << ": " << format_number(row.psnr_init, 2) << " -> "
                << format_number(row.psnr_final, 2) << " dB in " << row.iterations << " iterations\n";
            summary.rows.push_back(std::move(row));
        }
    }
    if (!summary.rows.empty()) {
        RunRow avg;
        avg.image = "average";
        avg.ratio = spec.ratios.size() == 1 ? spec.ratios.front() : 0.0;
        avg.seed = spec.seed;
        avg.preset = spec.preset;
        for (const auto& r : summary.rows) {
            avg.psnr_init += r.psnr_init;
            avg.psnr_final += r.psnr_final;
            avg.iterations += r.iterations;
            avg.wall_seconds += r.wall_seconds;
        }
        const double n = static_cast<double>(summary.rows.size());
        avg.psnr_init /= n;
        avg.psnr_final /= n;
        avg.iterations /= n;
        avg.wall_seconds /= n;
        summary.average = avg;
    }
    if (!spec.out_dir.empty())
        write_summary_csv(summary, spec.out_dir / "summary.csv");
    return summary;
}

/// Nominal sampling ratio recorded by a measurement file, rounded to two
/// decimals when that rounding reproduces the stored row count.
inline double nominal_ratio(const Measurements& meas)
{
    const double n = static_cast<double>(meas.block_size * meas.block_size);
    const double exact = static_cast<double>(meas.rows) / n;
    const double rounded = std::round(exact * 100.0) / 100.0;
    if (rounded > 0.0 && rounded <= 1.0 && measurement_rows(meas.block_size, rounded) == meas.rows)
        return rounded;
    return exact;
}

} // namespace hpnp
