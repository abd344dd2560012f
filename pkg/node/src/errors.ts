/** Errors raised by the bindings, mirroring the core CLI's exit-code vocabulary. */

/** Malformed binary grid payload. */
export class GridCodecError extends Error {
  constructor(message: string) {
    super(message);
    this.name = new.target.name;
  }
}

/** The file does not start with the grid magic. */
export class BadMagic extends GridCodecError {}

/** A payload section ends before the header-implied length. */
export class TruncatedPayload extends GridCodecError {}

/** Bytes remain after the last header-implied section. */
export class TrailingBytes extends GridCodecError {}

/** An array view violates its declared geometry or value ranges. */
export class ViewError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ViewError";
  }
}

/** A sequence manifest or annotation document is malformed. */
export class ManifestError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ManifestError";
  }
}

/** Base for failures reported by the occ4d subprocess. */
export class CliError extends Error {
  readonly exitCode: number;
  readonly stderr: string;

  constructor(message: string, exitCode: number, stderr: string) {
    super(message);
    this.name = new.target.name;
    this.exitCode = exitCode;
    this.stderr = stderr;
  }
}

/** Exit code 2: inputs rejected by validation. */
export class ValidationError extends CliError {}

/** Exit code 3: inputs reference data that is not there. */
export class MissingDataError extends CliError {}

/** Exit code 4: lifecycle tracking requested without proposal scores. */
export class MissingScoresError extends CliError {}

/** Exit code 1 or a failed spawn: the core itself broke. */
export class InternalError extends CliError {}
