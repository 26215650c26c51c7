#include "geoaware/cli/app.hpp"

int main(int argc, char** argv) { return geoaware::cli::run(argc, argv); }
