#pragma once

#include "qpctl/core.hpp"
#include "qpctl/rng.hpp"
#include "qpctl/parallel.hpp"
#include "qpctl/io.hpp"
#include "qpctl/json_writer.hpp"
#include "qpctl/dynamics.hpp"
#include "qpctl/characteristics.hpp"
#include "qpctl/net.hpp"
#include "qpctl/trainer.hpp"
#include "qpctl/checkpoint.hpp"
#include "qpctl/path.hpp"
#include "qpctl/exit_control.hpp"
