/* Placeholder viewer bundle.
 *
 * The reading interface ships separately and is copied over this file at
 * build time; without it the rendered pages stay plain two-column text. */
