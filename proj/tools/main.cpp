#include "nuvssm/cli.hpp"

int main(int argc, char** argv)
{
    return nuvssm::cli::run(argc, argv);
}
