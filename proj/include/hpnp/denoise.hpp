#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdint>
#include <cstring>
#include <memory>
#include <numbers>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include <Eigen/Dense>

#include "hpnp/error.hpp"
#include "hpnp/image.hpp"
#include "hpnp/patches.hpp"

namespace hpnp {

struct DenoiseRequest {
    Image image;
    double sigma = 0.0;  // on the [0, 255] intensity scale
};

/// Sliding-window DCT hard thresholding.
struct NativeDct {
    std::size_t patch = 8;
    std::size_t stride = 4;
    double threshold_factor = 2.7;
};

/// A child process speaking the framed denoiser protocol on stdin/stdout.
struct ExternalProcess {
    std::string command;
    double timeout_seconds = 120.0;
};

using DenoiserKind = std::variant<NativeDct, ExternalProcess>;

/// "native" or "external:COMMAND".
inline DenoiserKind parse_denoiser_kind(std::string_view text)
{
    if (text == "native")
        return NativeDct{};
    constexpr std::string_view prefix = "external:";
    if (text.substr(0, prefix.size()) == prefix) {
        std::string cmd(text.substr(prefix.size()));
        if (cmd.empty())
            throw Error(Errc::invalid_argument, "external denoiser command is empty");
        return ExternalProcess{cmd};
    }
    throw Error(Errc::invalid_argument, "unknown denoiser '" + std::string(text) + "'");
}

inline std::string describe(const DenoiserKind& kind)
{
    if (std::holds_alternative<NativeDct>(kind))
        return "native";
    return "external:" + std::get<ExternalProcess>(kind).command;
}

/// Orthonormal DCT-II matrix; row k is the k-th basis vector.
inline Eigen::MatrixXd dct_matrix(std::size_t n)
{
    Eigen::MatrixXd d(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    const double nn = static_cast<double>(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double alpha = k == 0 ? std::sqrt(1.0 / nn) : std::sqrt(2.0 / nn);
        for (std::size_t i = 0; i < n; ++i)
            d(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i))
                = alpha * std::cos(std::numbers::pi * (2.0 * static_cast<double>(i) + 1.0) * static_cast<double>(k) / (2.0 * nn));
    }
    return d;
}

inline Image native_dct_denoise(const Image& img, double sigma, const NativeDct& opts = {})
{
    if (!(sigma >= 0.0))
        throw Error(Errc::invalid_argument, "sigma must be nonnegative");
    const std::size_t ph = std::min(opts.patch, img.height());
    const std::size_t pw = std::min(opts.patch, img.width());
    const Eigen::MatrixXd dh = dct_matrix(ph);
    const Eigen::MatrixXd dw = dct_matrix(pw);
    const double threshold = opts.threshold_factor * sigma;

    Image acc(img.height(), img.width());
    Image cover(img.height(), img.width());
    Eigen::MatrixXd block(static_cast<Eigen::Index>(ph), static_cast<Eigen::Index>(pw));
    for (std::size_t r0 : reference_positions(img.height(), ph, opts.stride))
        for (std::size_t c0 : reference_positions(img.width(), pw, opts.stride)) {
            for (std::size_t r = 0; r < ph; ++r)
                for (std::size_t c = 0; c < pw; ++c)
                    block(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = img(r0 + r, c0 + c);
            Eigen::MatrixXd coef = dh * block * dw.transpose();
            for (Eigen::Index u = 0; u < coef.rows(); ++u)
                for (Eigen::Index v = 0; v < coef.cols(); ++v)
                    if ((u != 0 || v != 0) && std::abs(coef(u, v)) < threshold)
                        coef(u, v) = 0.0;
            block = dh.transpose() * coef * dw;
            for (std::size_t r = 0; r < ph; ++r)
                for (std::size_t c = 0; c < pw; ++c) {
                    acc(r0 + r, c0 + c) += block(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
                    cover(r0 + r, c0 + c) += 1.0;
                }
        }
    for (std::size_t i = 0; i < acc.size(); ++i)
        acc[i] = std::clamp(acc[i] / cover[i], 0.0, 255.0);
    return acc;
}

// Denoiser wire protocol v1, little-endian:
//   request  "HPNPDNZ1" u32 width u32 height f32 sigma  f32[width*height]
//   response "HPNPDNR1" u32 width u32 height            f32[width*height]
namespace wire {

inline constexpr std::array<char, 8> request_magic{'H', 'P', 'N', 'P', 'D', 'N', 'Z', '1'};
inline constexpr std::array<char, 8> response_magic{'H', 'P', 'N', 'P', 'D', 'N', 'R', '1'};

inline void put_u32(std::vector<unsigned char>& buf, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        buf.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const unsigned char* p)
{
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8
        | static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

inline void put_f32(std::vector<unsigned char>& buf, double v)
{
    put_u32(buf, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

inline float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

inline std::vector<unsigned char> frame(const std::array<char, 8>& magic, const Image& img, const double* sigma)
{
    std::vector<unsigned char> buf(magic.begin(), magic.end());
    buf.reserve(24 + 4 * img.size());
    put_u32(buf, static_cast<std::uint32_t>(img.width()));
    put_u32(buf, static_cast<std::uint32_t>(img.height()));
    if (sigma)
        put_f32(buf, *sigma);
    for (double v : img.data())
        put_f32(buf, v);
    return buf;
}

inline std::vector<unsigned char> encode_request(const DenoiseRequest& req)
{
    return frame(request_magic, req.image, &req.sigma);
}

inline std::vector<unsigned char> encode_response(const Image& img) { return frame(response_magic, img, nullptr); }

/// Header of a frame: magic, width, height. Throws on a wrong magic.
inline std::pair<std::uint32_t, std::uint32_t> decode_header(const unsigned char* p, const std::array<char, 8>& magic)
{
    if (std::memcmp(p, magic.data(), magic.size()) != 0)
        throw Error(Errc::protocol, "unexpected frame magic '" + std::string(reinterpret_cast<const char*>(p), 8) + "'");
    return {get_u32(p + 8), get_u32(p + 12)};
}

inline Image decode_pixels(const unsigned char* p, std::uint32_t width, std::uint32_t height)
{
    Image img(height, width);
    for (std::size_t i = 0; i < img.size(); ++i)
        img[i] = get_f32(p + 4 * i);
    return img;
}

} // namespace wire

/// Persistent child process serving denoise requests one at a time.
class ExternalDenoiser {
public:
    explicit ExternalDenoiser(ExternalProcess spec) : spec_(std::move(spec))
    {
        if (spec_.command.empty())
            throw Error(Errc::invalid_argument, "external denoiser command is empty");
        // A dead child must surface as an error, not kill the parent.
        std::signal(SIGPIPE, SIG_IGN);
        spawn();
    }

    ExternalDenoiser(const ExternalDenoiser&) = delete;
    ExternalDenoiser& operator=(const ExternalDenoiser&) = delete;

    ~ExternalDenoiser() { shutdown(); }

    Image denoise(const DenoiseRequest& req)
    {
        if (broken_)
            throw Error(Errc::process, "external denoiser '" + spec_.command + "' is no longer usable");
        try {
            const auto deadline = Clock::now() + std::chrono::duration_cast<Clock::duration>(
                std::chrono::duration<double>(spec_.timeout_seconds));
            write_all(wire::encode_request(req), deadline);
            std::vector<unsigned char> header(16);
            read_exact(header.data(), header.size(), deadline);
            const auto [w, h] = wire::decode_header(header.data(), wire::response_magic);
            if (w != req.image.width() || h != req.image.height())
                throw Error(Errc::dimension_mismatch,
                    "denoiser returned " + std::to_string(h) + "x" + std::to_string(w) + ", expected "
                        + std::to_string(req.image.height()) + "x" + std::to_string(req.image.width()));
            std::vector<unsigned char> payload(4 * static_cast<std::size_t>(w) * h);
            read_exact(payload.data(), payload.size(), deadline);
            return wire::decode_pixels(payload.data(), w, h);
        } catch (...) {
            broken_ = true;
            shutdown();
            throw;
        }
    }

    const std::string& stderr_tail() const { return stderr_; }

private:
    using Clock = std::chrono::steady_clock;

    void spawn()
    {
        int in_pipe[2], out_pipe[2], err_pipe[2];
        if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0 || pipe(err_pipe) != 0)
            throw Error(Errc::process, std::string("pipe: ") + std::strerror(errno));
        pid_ = fork();
        if (pid_ < 0)
            throw Error(Errc::process, std::string("fork: ") + std::strerror(errno));
        if (pid_ == 0) {
            dup2(in_pipe[0], STDIN_FILENO);
            dup2(out_pipe[1], STDOUT_FILENO);
            dup2(err_pipe[1], STDERR_FILENO);
            for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1], err_pipe[0], err_pipe[1]})
                close(fd);
            execl("/bin/sh", "sh", "-c", spec_.command.c_str(), static_cast<char*>(nullptr));
            _exit(127);
        }
        close(in_pipe[0]);
        close(out_pipe[1]);
        close(err_pipe[1]);
        to_child_ = in_pipe[1];
        from_child_ = out_pipe[0];
        err_child_ = err_pipe[0];
        for (int fd : {to_child_, from_child_, err_child_}) {
            fcntl(fd, F_SETFL, fcntl(fd, F_GETFL) | O_NONBLOCK);
            fcntl(fd, F_SETFD, FD_CLOEXEC);
        }
    }

    void drain_stderr()
    {
        char buf[4096];
        for (;;) {
            const ssize_t n = read(err_child_, buf, sizeof(buf));
            if (n <= 0)
                break;
            stderr_.append(buf, static_cast<std::size_t>(n));
            if (stderr_.size() > 16384)
                stderr_.erase(0, stderr_.size() - 16384);
        }
    }

    // Waits until fd is ready for `events`, draining stderr meanwhile.
    void wait_ready(int fd, short events, Clock::time_point deadline)
    {
        for (;;) {
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
            if (left <= 0)
                throw Error(Errc::timeout, "external denoiser '" + spec_.command + "' exceeded "
                        + std::to_string(spec_.timeout_seconds) + " s");
            pollfd fds[2] = {{fd, events, 0}, {err_child_, POLLIN, 0}};
            const int rc = poll(fds, 2, static_cast<int>(std::min<long long>(left, 1000)));
            if (rc < 0 && errno != EINTR)
                throw Error(Errc::process, std::string("poll: ") + std::strerror(errno));
            if (rc > 0 && fds[1].revents)
                drain_stderr();
            if (rc > 0 && fds[0].revents)
                return;
        }
    }

    [[noreturn]] void fail_child_gone(const char* what)
    {
        drain_stderr();
        int status = 0;
        std::string detail = "exited";
        if (pid_ > 0) {
            for (int i = 0; i < 100; ++i) {
                const pid_t r = waitpid(pid_, &status, WNOHANG);
                if (r == pid_) {
                    if (WIFEXITED(status))
                        detail = "exited with status " + std::to_string(WEXITSTATUS(status));
                    else if (WIFSIGNALED(status))
                        detail = "killed by signal " + std::to_string(WTERMSIG(status));
                    pid_ = -1;
                    break;
                }
                usleep(10000);
            }
        }
        throw Error(Errc::process, "external denoiser '" + spec_.command + "' " + what + " (" + detail
                + ")" + (stderr_.empty() ? "" : "; stderr: " + stderr_));
    }

    void write_all(const std::vector<unsigned char>& buf, Clock::time_point deadline)
    {
        std::size_t done = 0;
        while (done < buf.size()) {
            wait_ready(to_child_, POLLOUT, deadline);
            const ssize_t n = write(to_child_, buf.data() + done, buf.size() - done);
            if (n < 0) {
                if (errno == EAGAIN || errno == EINTR)
                    continue;
                fail_child_gone("closed its input");
            }
            done += static_cast<std::size_t>(n);
        }
    }

    void read_exact(unsigned char* dst, std::size_t count, Clock::time_point deadline)
    {
        std::size_t done = 0;
        while (done < count) {
            wait_ready(from_child_, POLLIN, deadline);
            const ssize_t n = read(from_child_, dst + done, count - done);
            if (n < 0) {
                if (errno == EAGAIN || errno == EINTR)
                    continue;
                fail_child_gone("read failed");
            }
            if (n == 0)
                fail_child_gone("closed its output mid-frame");
            done += static_cast<std::size_t>(n);
        }
    }

    void shutdown()
    {
        if (to_child_ >= 0) {
            close(to_child_);
            to_child_ = -1;
        }
        if (pid_ > 0) {
            int status = 0;
            bool exited = false;
            for (int i = 0; i < 200 && !exited; ++i) {
                if (waitpid(pid_, &status, WNOHANG) == pid_)
                    exited = true;
                else
                    usleep(5000);
            }
            if (!exited) {
                kill(pid_, SIGKILL);
                waitpid(pid_, &status, 0);
            }
            pid_ = -1;
        }
        for (int* fd : {&from_child_, &err_child_})
            if (*fd >= 0) {
                close(*fd);
                *fd = -1;
            }
    }

    ExternalProcess spec_;
    pid_t pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
    int err_child_ = -1;
    bool broken_ = false;
    std::string stderr_;
};

/// Denoiser bound to one solver run. An external kind keeps a single child
/// alive for all requests.
class Denoiser {
public:
    explicit Denoiser(DenoiserKind kind) : kind_(std::move(kind))
    {
        if (auto* ext = std::get_if<ExternalProcess>(&kind_))
            external_ = std::make_unique<ExternalDenoiser>(*ext);
    }

    Image operator()(const DenoiseRequest& req)
    {
        if (!(req.sigma >= 0.0) || !std::isfinite(req.sigma))
            throw Error(Errc::invalid_argument, "denoiser sigma must be finite and nonnegative");
        if (req.sigma == 0.0)
            return req.image;
        if (external_)
            return external_->denoise(req);
        return native_dct_denoise(req.image, req.sigma, std::get<NativeDct>(kind_));
    }

    const DenoiserKind& kind() const { return kind_; }

private:
    DenoiserKind kind_;
    std::unique_ptr<ExternalDenoiser> external_;
};

inline Image denoise(const DenoiserKind& kind, const DenoiseRequest& req)
{
    if (req.sigma == 0.0)
        return req.image;
    Denoiser d(kind);
    return d(req);
}

} // namespace hpnp
