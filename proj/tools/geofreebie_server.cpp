#include "geofreebie/server_app.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <iostream>
#include <pthread.h>

int main(int argc, char** argv) {
  CLI::App app{"Geofreebie API server"};
  std::string config_file;
  app.add_option("-c,--config", config_file, "JSON config file")->check(CLI::ExistingFile);
  CLI11_PARSE(app, argc, argv);

  // Block termination signals in every thread; a dedicated thread waits for them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  try {
    auto config = geofreebie::load_server_config(
        config_file.empty() ? std::nullopt : std::optional<std::filesystem::path>(config_file),
        geofreebie::process_env());
    geofreebie::ServerApp server(config);
    const int port = server.bind();
    std::cout << "listening on " << config.listen_address << ":" << port << std::endl;

    std::thread waiter([&] {
      int sig = 0;
      sigwait(&signals, &sig);
      server.stop();
    });
    server.run();
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
  } catch (const geofreebie::Error& e) {
    std::cerr << "geofreebie-server: " << e.to_json().dump() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "geofreebie-server: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
