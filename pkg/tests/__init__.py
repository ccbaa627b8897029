# Test package for ark_toolkit
