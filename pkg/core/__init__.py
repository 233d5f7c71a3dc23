# numerical modules; import submodules directly (core.model, core.spectral, ...)
