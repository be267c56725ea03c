#pragma once

// Client side of the sidecar reconstruction protocol: newline-delimited JSON
// over a TCP connection ("tcp://host:port" or "host:port") or over the
// stdin/stdout of a child process ("exec:<shell command>").
//
//   request  {"id":n,"op":"reconstruct","h":H,"w":W,"patch":P,
//             "mask":[[0/1,...],...],"pixels":[h*w row-major values]}
//   response {"id":n,"pixels":[h*w values]}  or  {"id":n,"error":"..."}

#include "vanad/core.hpp"
#include "vanad/reconstruction.hpp"

#include <json.hpp>

#include <netdb.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <string>

namespace vanad {

namespace detail {

/// Line-oriented reader/writer over a connected stream socket.
class LineSocket {
public:
    explicit LineSocket(int fd, int timeout_s = 300) : fd_(fd) {
        timeval tv{timeout_s, 0};
        ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
    }
    LineSocket(const LineSocket&) = delete;
    LineSocket& operator=(const LineSocket&) = delete;
    ~LineSocket() {
        if (fd_ >= 0) ::close(fd_);
    }

    void write_line(const std::string& line) {
        std::string data = line + '\n';
        std::size_t sent = 0;
        while (sent < data.size()) {
            ssize_t n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw Error("reconstruction", std::string("backbone connection lost: ") + std::strerror(errno));
            }
            sent += static_cast<std::size_t>(n);
        }
    }

    std::string read_line() {
        for (;;) {
            auto pos = buffer_.find('\n');
            if (pos != std::string::npos) {
                std::string line = buffer_.substr(0, pos);
                buffer_.erase(0, pos + 1);
                return line;
            }
            char chunk[65536];
            ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
            if (n == 0) throw Error("reconstruction", "backbone closed the connection");
            if (n < 0) {
                if (errno == EINTR) continue;
                throw Error("reconstruction", std::string("backbone read failed: ") + std::strerror(errno));
            }
            buffer_.append(chunk, static_cast<std::size_t>(n));
        }
    }

    void shutdown_write() { ::shutdown(fd_, SHUT_WR); }

private:
    int fd_;
    std::string buffer_;
};

inline int connect_tcp(const std::string& host, const std::string& port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), port.c_str(), &hints, &res) != 0) return -1;
    int fd = -1;
    for (addrinfo* p = res; p; p = p->ai_next) {
        fd = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
        if (fd < 0) continue;
        if (::connect(fd, p->ai_addr, p->ai_addrlen) == 0) break;
        ::close(fd);
        fd = -1;
    }
    ::freeaddrinfo(res);
    return fd;
}

}  // namespace detail

class RemoteBackbone final : public Backbone {
public:
    /// Connects (or spawns the sidecar) immediately; an unusable endpoint is
    /// reported here rather than on the first request.
    explicit RemoteBackbone(std::string endpoint) : endpoint_(std::move(endpoint)) {
        const std::string exec_prefix = "exec:";
        if (endpoint_.rfind(exec_prefix, 0) == 0) {
            spawn(endpoint_.substr(exec_prefix.size()));
            return;
        }
        std::string addr = endpoint_;
        if (addr.rfind("tcp://", 0) == 0) addr = addr.substr(6);
        const auto colon = addr.rfind(':');
        if (colon == std::string::npos || colon == 0 || colon + 1 == addr.size())
            throw Error("reconstruction", "bad backbone endpoint '" + endpoint_ + "'");
        int fd = detail::connect_tcp(addr.substr(0, colon), addr.substr(colon + 1));
        if (fd < 0) throw Error("reconstruction", "backbone endpoint unreachable: " + endpoint_);
        socket_ = std::make_unique<detail::LineSocket>(fd);
    }

    RemoteBackbone(const RemoteBackbone&) = delete;
    RemoteBackbone& operator=(const RemoteBackbone&) = delete;

    ~RemoteBackbone() override {
        if (child_ > 0) {
            socket_->shutdown_write();
            socket_.reset();
            int status = 0;
            ::waitpid(child_, &status, 0);
        }
    }

    /// Requests on one connection are serialised; concurrent callers wait.
    PixelGrid reconstruct(const PixelGrid& masked, const CheckerboardMask& visible) override {
        std::lock_guard lock(mu_);
        const std::int64_t id = next_id_++;
        socket_->write_line(encode_request(id, masked, visible));
        for (;;) {
            auto it = stash_.find(id);
            nlohmann::json reply;
            if (it != stash_.end()) {
                reply = std::move(it->second);
                stash_.erase(it);
            } else {
                const std::string line = socket_->read_line();
                try {
                    reply = nlohmann::json::parse(line);
                } catch (const nlohmann::json::exception&) {
                    throw Error("reconstruction", "malformed backbone response");
                }
                if (!reply.is_object() || !reply.contains("id") || !reply["id"].is_number_integer())
                    throw Error("reconstruction", "backbone response without id");
                const auto rid = reply["id"].get<std::int64_t>();
                if (rid == -1 && reply.contains("error"))
                    throw Error("reconstruction", "backbone error: " + reply["error"].get<std::string>());
                if (rid != id) {
                    stash_.emplace(rid, std::move(reply));
                    continue;
                }
            }
            return decode_response(reply, masked);
        }
    }

    std::string name() const override { return "remote(" + endpoint_ + ")"; }

    static std::string encode_request(std::int64_t id, const PixelGrid& img, const CheckerboardMask& visible) {
        nlohmann::json mask = nlohmann::json::array();
        for (Index i = 0; i < visible.side(); ++i) {
            nlohmann::json row = nlohmann::json::array();
            for (Index j = 0; j < visible.side(); ++j) row.push_back(visible.visible(i, j) ? 1 : 0);
            mask.push_back(std::move(row));
        }
        std::vector<double> pixels;
        pixels.reserve(static_cast<std::size_t>(img.pixels.size()));
        for (Index r = 0; r < img.pixels.rows(); ++r)
            for (Index c = 0; c < img.pixels.cols(); ++c) pixels.push_back(img.pixels(r, c));
        nlohmann::json req = {{"id", id},
                              {"op", "reconstruct"},
                              {"h", img.pixels.rows()},
                              {"w", img.pixels.cols()},
                              {"patch", img.patch_size},
                              {"mask", std::move(mask)},
                              {"pixels", std::move(pixels)}};
        return req.dump();
    }

    static PixelGrid decode_response(const nlohmann::json& reply, const PixelGrid& request) {
        if (reply.contains("error"))
            throw Error("reconstruction", "backbone error: " + reply["error"].get<std::string>());
        if (!reply.contains("pixels") || !reply["pixels"].is_array())
            throw Error("reconstruction", "backbone response without pixels");
        const auto& px = reply["pixels"];
        const Index h = request.pixels.rows();
        const Index w = request.pixels.cols();
        if (static_cast<Index>(px.size()) != h * w)
            throw Error("reconstruction", "backbone returned " + std::to_string(px.size()) +
                                              " pixels, expected " + std::to_string(h * w));
        PixelGrid out{Matrix(h, w), request.patch_size};
        std::size_t k = 0;
        for (Index r = 0; r < h; ++r)
            for (Index c = 0; c < w; ++c) {
                if (!px[k].is_number()) throw Error("reconstruction", "backbone returned a non-numeric pixel");
                out.pixels(r, c) = px[k++].get<double>();
            }
        return out;
    }

private:
    void spawn(const std::string& command) {
        int sv[2];
        if (::socketpair(AF_UNIX, SOCK_STREAM, 0, sv) != 0)
            throw Error("reconstruction", "backbone endpoint unreachable: " + endpoint_);
        pid_t pid = ::fork();
        if (pid < 0) {
            ::close(sv[0]);
            ::close(sv[1]);
            throw Error("reconstruction", "backbone endpoint unreachable: " + endpoint_);
        }
        if (pid == 0) {
            ::dup2(sv[1], STDIN_FILENO);
            ::dup2(sv[1], STDOUT_FILENO);
            ::close(sv[0]);
            ::close(sv[1]);
            ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
            ::_exit(127);
        }
        ::close(sv[1]);
        child_ = pid;
        socket_ = std::make_unique<detail::LineSocket>(sv[0]);
    }

    std::string endpoint_;
    std::unique_ptr<detail::LineSocket> socket_;
    pid_t child_ = -1;
    std::mutex mu_;
    std::int64_t next_id_ = 1;
    std::map<std::int64_t, nlohmann::json> stash_;
};

}  // namespace vanad
