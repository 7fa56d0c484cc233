"""Networks of both training stages and the decoding routines."""
