#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include <Eigen/Dense>

#include "hpnp/error.hpp"
#include "hpnp/image.hpp"
#include "hpnp/rng.hpp"

namespace hpnp {

/// Block compressive sensing operator: one row-orthonormal matrix shared by
/// every non-overlapping block_size x block_size block.
struct BlockSensor {
    std::size_t block_size = 32;
    std::size_t rows = 0;
    double ratio = 0.0;
    std::uint64_t seed = 0;
    Eigen::MatrixXd matrix;  // rows x block_size^2
    Eigen::MatrixXd gram;    // matrix^T matrix

    std::size_t block_pixels() const { return block_size * block_size; }

    /// Wraps an explicit projection matrix. Rows must be orthonormal.
    static BlockSensor from_matrix(std::size_t block_size, Eigen::MatrixXd matrix, std::uint64_t seed = 0)
    {
        if (block_size < 1 || matrix.cols() != static_cast<Eigen::Index>(block_size * block_size)
            || matrix.rows() < 1 || matrix.rows() > matrix.cols())
            throw Error(Errc::invalid_argument, "projection matrix shape does not match block size");
        const Eigen::MatrixXd outer = matrix * matrix.transpose();
        const double err = (outer - Eigen::MatrixXd::Identity(matrix.rows(), matrix.rows())).cwiseAbs().maxCoeff();
        if (err > 1e-10)
            throw Error(Errc::invalid_argument, "projection rows are not orthonormal");
        BlockSensor s;
        s.block_size = block_size;
        s.rows = static_cast<std::size_t>(matrix.rows());
        s.ratio = static_cast<double>(s.rows) / static_cast<double>(block_size * block_size);
        s.seed = seed;
        s.matrix = std::move(matrix);
        s.gram = s.matrix.transpose() * s.matrix;
        return s;
    }
};

/// Measurement rows for a given sampling ratio: round(ratio * B^2), at least 1.
inline std::size_t measurement_rows(std::size_t block_size, double ratio)
{
    if (!(ratio > 0.0 && ratio <= 1.0))
        throw Error(Errc::invalid_argument, "sampling ratio must lie in (0, 1], got " + std::to_string(ratio));
    const double n = static_cast<double>(block_size * block_size);
    const auto m = static_cast<std::size_t>(std::llround(ratio * n));
    return std::clamp<std::size_t>(m, 1, block_size * block_size);
}

/// Draws a rows x B^2 i.i.d. standard Gaussian matrix (row-major draw order)
/// and orthonormalizes its rows with Householder QR.
inline BlockSensor make_sensor_with_rows(std::size_t block_size, std::size_t rows, std::uint64_t seed)
{
    if (block_size < 2)
        throw Error(Errc::invalid_argument, "block size must be at least 2");
    const std::size_t n = block_size * block_size;
    if (rows < 1 || rows > n)
        throw Error(Errc::invalid_argument, "measurement rows out of range");

    Xoshiro256pp rng(seed);
    Eigen::MatrixXd draws(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(rows));
    for (Eigen::Index r = 0; r < draws.cols(); ++r)
        for (Eigen::Index c = 0; c < draws.rows(); ++c)
            draws(c, r) = rng.normal();

    Eigen::HouseholderQR<Eigen::MatrixXd> qr(draws);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(draws.rows(), draws.cols());
    // Fix the column signs so Q spans the draws with a positive diagonal R.
    const Eigen::MatrixXd r = qr.matrixQR().topRows(draws.cols()).triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < q.cols(); ++j)
        if (r(j, j) < 0.0)
            q.col(j) = -q.col(j);

    BlockSensor s;
    s.block_size = block_size;
    s.rows = rows;
    s.ratio = static_cast<double>(rows) / static_cast<double>(n);
    s.seed = seed;
    s.matrix = q.transpose();
    s.gram = s.matrix.transpose() * s.matrix;
    return s;
}

inline BlockSensor make_sensor(std::size_t block_size, double ratio, std::uint64_t seed)
{
    if (block_size < 2)
        throw Error(Errc::invalid_argument, "block size must be at least 2");
    BlockSensor s = make_sensor_with_rows(block_size, measurement_rows(block_size, ratio), seed);
    s.ratio = ratio;
    return s;
}

/// Per-block measurement vectors; column j holds block j in row-major block order.
struct Measurements {
    std::size_t block_size = 0;
    std::size_t rows = 0;
    std::size_t blocks_y = 0;
    std::size_t blocks_x = 0;
    std::uint64_t seed = 0;
    Eigen::MatrixXd data;

    std::size_t block_count() const { return blocks_y * blocks_x; }
    std::size_t image_height() const { return blocks_y * block_size; }
    std::size_t image_width() const { return blocks_x * block_size; }

    friend bool operator==(const Measurements& a, const Measurements& b)
    {
        return a.block_size == b.block_size && a.rows == b.rows && a.blocks_y == b.blocks_y
            && a.blocks_x == b.blocks_x && a.seed == b.seed && a.data == b.data;
    }
};

namespace detail {

inline Eigen::VectorXd read_block(const Image& img, std::size_t by, std::size_t bx, std::size_t bs)
{
    Eigen::VectorXd v(static_cast<Eigen::Index>(bs * bs));
    for (std::size_t r = 0; r < bs; ++r)
        for (std::size_t c = 0; c < bs; ++c)
            v(static_cast<Eigen::Index>(r * bs + c)) = img(by * bs + r, bx * bs + c);
    return v;
}

inline void write_block(Image& img, std::size_t by, std::size_t bx, std::size_t bs, const Eigen::VectorXd& v)
{
    for (std::size_t r = 0; r < bs; ++r)
        for (std::size_t c = 0; c < bs; ++c)
            img(by * bs + r, bx * bs + c) = v(static_cast<Eigen::Index>(r * bs + c));
}

inline void check_geometry(const BlockSensor& sensor, const Measurements& meas)
{
    if (meas.block_size != sensor.block_size || meas.rows != sensor.rows)
        throw Error(Errc::dimension_mismatch,
            "measurements (block " + std::to_string(meas.block_size) + ", rows " + std::to_string(meas.rows)
                + ") do not match sensor (block " + std::to_string(sensor.block_size) + ", rows "
                + std::to_string(sensor.rows) + ")");
    if (meas.data.rows() != static_cast<Eigen::Index>(meas.rows)
        || meas.data.cols() != static_cast<Eigen::Index>(meas.block_count()) || meas.block_count() == 0)
        throw Error(Errc::dimension_mismatch, "measurement payload inconsistent with header");
}

inline void check_blockable(const BlockSensor& sensor, const Image& img)
{
    if (img.height() % sensor.block_size != 0 || img.width() % sensor.block_size != 0)
        throw Error(Errc::dimension_mismatch,
            "image " + std::to_string(img.height()) + "x" + std::to_string(img.width())
                + " is not a multiple of block size " + std::to_string(sensor.block_size));
}

} // namespace detail

inline Measurements measure(const BlockSensor& sensor, const Image& img)
{
    detail::check_blockable(sensor, img);
    Measurements meas;
    meas.block_size = sensor.block_size;
    meas.rows = sensor.rows;
    meas.blocks_y = img.height() / sensor.block_size;
    meas.blocks_x = img.width() / sensor.block_size;
    meas.seed = sensor.seed;
    meas.data.resize(static_cast<Eigen::Index>(sensor.rows), static_cast<Eigen::Index>(meas.block_count()));
    for (std::size_t by = 0; by < meas.blocks_y; ++by)
        for (std::size_t bx = 0; bx < meas.blocks_x; ++bx)
            meas.data.col(static_cast<Eigen::Index>(by * meas.blocks_x + bx))
                = sensor.matrix * detail::read_block(img, by, bx, sensor.block_size);
    return meas;
}

inline Image adjoint(const BlockSensor& sensor, const Measurements& meas)
{
    detail::check_geometry(sensor, meas);
    Image img(meas.image_height(), meas.image_width());
    for (std::size_t by = 0; by < meas.blocks_y; ++by)
        for (std::size_t bx = 0; bx < meas.blocks_x; ++bx)
            detail::write_block(img, by, bx, sensor.block_size,
                sensor.matrix.transpose() * meas.data.col(static_cast<Eigen::Index>(by * meas.blocks_x + bx)));
    return img;
}

namespace detail {

/// Gathers every block as one column (row-major pixels within the block).
inline Eigen::MatrixXd blocks_to_columns(const Image& img, std::size_t bs)
{
    const std::size_t by_n = img.height() / bs, bx_n = img.width() / bs;
    Eigen::MatrixXd cols(static_cast<Eigen::Index>(bs * bs), static_cast<Eigen::Index>(by_n * bx_n));
    for (std::size_t by = 0; by < by_n; ++by)
        for (std::size_t bx = 0; bx < bx_n; ++bx)
            cols.col(static_cast<Eigen::Index>(by * bx_n + bx)) = read_block(img, by, bx, bs);
    return cols;
}

inline Image columns_to_blocks(const Eigen::MatrixXd& cols, std::size_t height, std::size_t width, std::size_t bs)
{
    Image img(height, width);
    const std::size_t bx_n = width / bs;
    for (Eigen::Index j = 0; j < cols.cols(); ++j)
        write_block(img, static_cast<std::size_t>(j) / bx_n, static_cast<std::size_t>(j) % bx_n, bs, cols.col(j));
    return img;
}

} // namespace detail

/// Applies Phi^T Phi to every block through the cached Gram matrix.
inline Image apply_gram(const BlockSensor& sensor, const Image& img)
{
    detail::check_blockable(sensor, img);
    const Eigen::MatrixXd cols = detail::blocks_to_columns(img, sensor.block_size);
    return detail::columns_to_blocks(sensor.gram * cols, img.height(), img.width(), sensor.block_size);
}

/// 3x3 Gaussian blur (sigma 0.8) with mirror boundaries that do not repeat
/// the edge pixel.
inline Image gaussian_smooth3(const Image& img, double sigma = 0.8)
{
    const double side = std::exp(-1.0 / (2.0 * sigma * sigma));
    const double norm = 1.0 + 2.0 * side;
    const std::array<double, 3> k{side / norm, 1.0 / norm, side / norm};
    auto reflect = [](long i, long n) -> std::size_t {
        if (n == 1)
            return 0;
        if (i < 0)
            i = -i;
        if (i >= n)
            i = 2 * n - 2 - i;
        return static_cast<std::size_t>(i);
    };
    const long h = static_cast<long>(img.height());
    const long w = static_cast<long>(img.width());
    Image tmp(img.height(), img.width());
    for (long r = 0; r < h; ++r)
        for (long c = 0; c < w; ++c) {
            double acc = 0.0;
            for (long d = -1; d <= 1; ++d)
                acc += k[static_cast<std::size_t>(d + 1)] * img(static_cast<std::size_t>(r), reflect(c + d, w));
            tmp(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = acc;
        }
    Image out(img.height(), img.width());
    for (long r = 0; r < h; ++r)
        for (long c = 0; c < w; ++c) {
            double acc = 0.0;
            for (long d = -1; d <= 1; ++d)
                acc += k[static_cast<std::size_t>(d + 1)] * tmp(reflect(r + d, h), static_cast<std::size_t>(c));
            out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = acc;
        }
    return out;
}

/// Seed image for the solver: back-projection followed by rounds of a
/// Landweber step, light smoothing and clamping to [0, 255].
inline Image initial_estimate(const BlockSensor& sensor, const Measurements& meas, std::size_t smoothing_iters)
{
    Image x = adjoint(sensor, meas);
    if (smoothing_iters == 0)
        return x;
    const Image backprojection = x;
    for (std::size_t it = 0; it < smoothing_iters; ++it) {
        const Image gx = apply_gram(sensor, x);
        for (std::size_t i = 0; i < x.size(); ++i)
            x[i] += backprojection[i] - gx[i];
        x = clamp(gaussian_smooth3(x));
    }
    return x;
}

// Binary container: "HPNPMEAS", u32 block_size, u32 rows, u32 blocks_y,
// u32 blocks_x, u64 seed, then rows * blocks little-endian f64 in block order.
inline constexpr char measurement_magic[8] = {'H', 'P', 'N', 'P', 'M', 'E', 'A', 'S'};

namespace detail {

template <typename T>
void put_le(std::ostream& out, T value)
{
    std::array<char, sizeof(T)> bytes;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        bytes[i] = static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff);
    out.write(bytes.data(), sizeof(T));
}

template <typename T>
T get_le(std::istream& in)
{
    std::array<unsigned char, sizeof(T)> bytes;
    if (!in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T)))
        throw Error(Errc::truncated_file, "measurement stream ends early");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return static_cast<T>(v);
}

} // namespace detail

inline void write_measurements(std::ostream& out, const Measurements& meas)
{
    out.write(measurement_magic, sizeof(measurement_magic));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(meas.block_size));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(meas.rows));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(meas.blocks_y));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(meas.blocks_x));
    detail::put_le<std::uint64_t>(out, meas.seed);
    for (Eigen::Index j = 0; j < meas.data.cols(); ++j)
        for (Eigen::Index i = 0; i < meas.data.rows(); ++i)
            detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(meas.data(i, j)));
    if (!out)
        throw Error(Errc::io, "failed writing measurements");
}

inline Measurements read_measurements(std::istream& in)
{
    char magic[8];
    if (!in.read(magic, sizeof(magic)))
        throw Error(Errc::truncated_file, "measurement header ends early");
    if (std::memcmp(magic, measurement_magic, sizeof(magic)) != 0)
        throw Error(Errc::unsupported_format, "bad measurement magic");
    Measurements meas;
    meas.block_size = detail::get_le<std::uint32_t>(in);
    meas.rows = detail::get_le<std::uint32_t>(in);
    meas.blocks_y = detail::get_le<std::uint32_t>(in);
    meas.blocks_x = detail::get_le<std::uint32_t>(in);
    meas.seed = detail::get_le<std::uint64_t>(in);
    if (meas.block_size < 2 || meas.rows < 1 || meas.rows > meas.block_size * meas.block_size
        || meas.blocks_y < 1 || meas.blocks_x < 1)
        throw Error(Errc::unsupported_format, "invalid measurement geometry in header");
    meas.data.resize(static_cast<Eigen::Index>(meas.rows), static_cast<Eigen::Index>(meas.block_count()));
    for (Eigen::Index j = 0; j < meas.data.cols(); ++j)
        for (Eigen::Index i = 0; i < meas.data.rows(); ++i)
            meas.data(i, j) = std::bit_cast<double>(detail::get_le<std::uint64_t>(in));
    return meas;
}

inline void save_measurements(const Measurements& meas, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error(Errc::io, "cannot write " + path.string());
    write_measurements(out, meas);
}

inline Measurements load_measurements(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(Errc::io, "cannot open " + path.string());
    return read_measurements(in);
}

/// Rebuilds the sensor that produced a measurement file.
inline BlockSensor sensor_for(const Measurements& meas)
{
    return make_sensor_with_rows(meas.block_size, meas.rows, meas.seed);
}

} // namespace hpnp
