// Wire types of the study service, with zod validation on everything the
// UI sends. A payload that fails these schemas never leaves the browser.

import { z } from "zod";

export const NONE_KEY = "none";

export const ResponseBodySchema = z
  .object({
    study_id: z.string().min(1),
    participant: z.string().min(1),
    item_index: z.number().int().nonnegative(),
    frame_index: z.number().int().nonnegative(),
    best: z.string().min(1),
    second: z.string().min(1).nullable(),
  })
  .refine((b) => b.second === null || b.second !== b.best, {
    message: "best and second must differ",
  })
  .refine((b) => !(b.best === NONE_KEY && b.second !== null), {
    message: '"none" excludes a second pick',
  });

export type ResponseBody = z.infer<typeof ResponseBodySchema>;

export const AnnotationBodySchema = z.object({
  study_id: z.string().min(1),
  video_id: z.string().min(1),
  pair_index: z.number().int().nonnegative(),
  label: z.enum(["progression", "no_progression"]),
  annotator: z.string().min(1),
});

export type AnnotationBody = z.infer<typeof AnnotationBodySchema>;

export interface Card {
  key: string;
  text: string;
}

export interface Progress {
  completed: number;
  total: number;
}

export interface NextSlot {
  done: boolean;
  item_index?: number;
  frame_index?: number;
  video_id?: string;
  action?: string;
  image_uri?: string;
  sequence_uris?: string[];
  cards?: Card[];
  progress: Progress;
}

export interface StudyItem {
  item_index: number;
  video_id: string;
  action: string;
  frame_uris: string[];
}
