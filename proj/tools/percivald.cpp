#include <csignal>
#include <iostream>

#include "CLI11.hpp"
#include "percival/service.hpp"

using namespace percival::service;

int main(int argc, char** argv) {
    CLI::App app{"percivald: image classification API and filtering proxy"};
    std::string config_path, listen;
    app.add_option("--config", config_path, "service.toml")->required();
    app.add_option("--listen", listen, "Override the listen address");
    CLI11_PARSE(app, argc, argv);

    // Handled synchronously below with sigwait.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    sigaddset(&signals, SIGHUP);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    try {
        ServiceConfig cfg = load_service_config(config_path);
        if (!listen.empty()) cfg.listen = listen;
        Service svc(cfg);
        const int port = svc.start();
        std::cerr << "percivald: mode " << to_string(cfg.mode) << ", model " << svc.model_id().substr(0, 12)
                  << ", listening on port " << port << std::endl;
        for (;;) {
            int sig = 0;
            sigwait(&signals, &sig);
            if (sig != SIGHUP) break;
            try {
                std::cerr << "percivald: reloaded model " << svc.reload().substr(0, 12) << std::endl;
            } catch (const std::exception& e) {
                std::cerr << "percivald: reload failed, keeping " << svc.model_id().substr(0, 12) << ": " << e.what()
                          << std::endl;
            }
        }
        svc.stop();
    } catch (const std::exception& e) {
        std::cerr << "percivald: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
